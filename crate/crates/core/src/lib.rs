//! Synthetic scene composition for detection and grounding data.
//!
//! A library of cut-out object segments is sampled, laid out on a canvas
//! under size and occlusion priors, pasted in z-order, relit by an external
//! (or stub) backend and blended back per instance in CIELAB. Every image
//! comes with pixel-exact visible masks, COCO annotations and referring
//! expressions whose structured predicates are checked against an
//! independent evaluator.
//!
//! The modules follow the data flow:
//!
//! - [`library`]: manifest ingestion, quality filtering, balanced sampling
//! - [`layout`]: object counts, size bins, occlusion-bounded placement
//! - [`compositor`]: pasting and visible-mask resolution
//! - [`relight`] and [`blend`]: relighting backends and area-weighted blending
//! - [`annotate`]: RLE, COCO output and dataset validation
//! - [`refexpr`]: referring expressions
//! - [`pipeline`]: config, seeding, parallel generation and statistics
//! - [`oracle`]: brute-force reference implementations

pub mod annotate;
pub mod blend;
pub mod color;
pub mod compositor;
pub mod demo;
pub mod io;
pub mod layout;
pub mod library;
pub mod mask;
pub mod oracle;
pub mod pipeline;
pub mod refexpr;
pub mod relight;

pub use mask::{BBox, Mask, PlacedMask};
pub use pipeline::{generate_dataset, PipelineConfig, PipelineError};
