//! End-to-end dataset generation.
//!
//! Every image index is rendered independently from its own derived seed, so
//! output bytes depend only on the config and `global_seed`, never on the
//! worker count. Images are written as they finish; the annotation and
//! expression files are merged afterwards in index order.

mod config;
mod seed;
mod stats;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{DatasetMode, LabelTextMix, LibraryConfig, MixConfig, PipelineConfig, SEED_ENV};
pub use seed::{derive_image_seed, splitmix64, stage_rng, stage_seed, Stage};
pub use stats::{compute_stats, StatsReport};

use crate::annotate::{
    emit_coco, emit_expressions, AnnotateError, CocoImage, DatasetBuilder, ExpressionRecord, InstanceDraft, IMAGES_DIR,
};
use crate::blend::blend_composite;
use crate::compositor::{composite_scene, Canvas, CompositeError, Scene};
use crate::io::{encode_png_rgb, write_atomic};
use crate::layout::{build_layout, sample_object_count, CocoPrior, CountDistribution, LayoutError, LayoutInput};
use crate::library::{
    filter_by_scores, ingest_manifest, read_scores, sample_segments, CategoryIndex, CategoryPool, LibraryError,
    SegmentRecord, SegmentStore,
};
use crate::mask::Mask;
use crate::refexpr::{extract_attributes, AttributeSet, ExprInstance, Expression, ExpressionBackend, ImageBundle};
use crate::relight::{RelightBackend, RelightRequest};

/// Name of the per-run manifest written next to the annotations.
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("{failed} of {total} images failed (threshold {threshold}); first error: {first}")]
    TooManyFailures { failed: usize, total: u64, threshold: f64, first: String },
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("validation failed: {0}")]
    Validation(String),
}

impl PipelineError {
    /// Process exit code: 1 validation, 2 config, 3 backend or run failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Config(_) | PipelineError::Library(_) => 2,
            _ => 3,
        }
    }
}

/// Why a single image could not be produced.
#[derive(Debug, Error)]
enum ImageError {
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error("relight: {0}")]
    Relight(String),
    #[error("expressions: {0}")]
    Expressions(String),
    #[error("blend: {0}")]
    Blend(String),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("no scene met the mode requirements after {0} attempts")]
    ModeUnsatisfied(u32),
    #[error("skipped: run already over its failure budget")]
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub index: u64,
    pub image_id: u64,
    pub seed: u64,
    pub file_name: String,
    pub num_objects: u32,
    pub num_annotations: usize,
    pub num_expressions: usize,
    pub scene_attempts: u32,
    pub constraint_violations: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub index: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub images: Vec<ImageEntry>,
    pub failures: Vec<ImageFailure>,
    pub wall_clock_secs: f64,
    pub images_per_sec: f64,
}

/// Read-only state shared by all workers.
struct Context {
    config: PipelineConfig,
    sampler: Sampler,
    prior: Option<CocoPrior>,
    store: SegmentStore,
    relight: Box<dyn RelightBackend>,
    expressions: Box<dyn ExpressionBackend>,
    images_dir: PathBuf,
}

/// Mode-aware segment sampler.
pub enum Sampler {
    /// Two-stage balanced sampling over one pool.
    Pool(CategoryIndex),
    /// One category per image, instances with varied attribute tags.
    SingleCategory(CategoryIndex),
    /// Each draw picks the real library with probability `real_fraction`.
    Mix { real: CategoryIndex, synth: CategoryIndex, real_fraction: f64 },
}

impl Sampler {
    /// Draws `count` segments for one scene.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<SegmentRecord>, LibraryError> {
        match self {
            Sampler::Pool(index) => sample_segments(index, count, rng),
            Sampler::Mix { real, synth, real_fraction } => (0..count)
                .map(|_| {
                    let index = if rng.random::<f64>() < *real_fraction { real } else { synth };
                    Ok(sample_segments(index, 1, rng)?.remove(0))
                })
                .collect(),
            Sampler::SingleCategory(index) => {
                let cats: Vec<&str> = index.categories().collect();
                if cats.is_empty() {
                    return Err(LibraryError::EmptyIndex);
                }
                let cat = cats[rng.random_range(0..cats.len())];
                let ids = index.ids(cat);
                let get = |id: &String| index.get(id).expect("indexed id").clone();
                let mut out: Vec<SegmentRecord> =
                    (0..count).map(|_| get(&ids[rng.random_range(0..ids.len())])).collect();
                let first = extract_attributes(&out[0]);
                if count >= 2 && out.iter().all(|r| extract_attributes(r) == first) {
                    // Every draw came out alike: swap one for a differently tagged segment.
                    let different: Vec<&String> =
                        ids.iter().filter(|id| extract_attributes(index.get(id).expect("indexed id")) != first).collect();
                    let slot = rng.random_range(1..count);
                    out[slot] = get(different[rng.random_range(0..different.len())]);
                }
                Ok(out)
            }
        }
    }
}

/// Categories with at least two distinct attribute sets.
fn attribute_varied(index: &CategoryIndex) -> Result<CategoryIndex, LibraryError> {
    index.retain_categories(|_, ids| {
        let sets: HashSet<AttributeSet> =
            ids.iter().filter_map(|id| index.get(id)).map(extract_attributes).collect();
        sets.len() >= 2
    })
}

fn load_index(manifest: &Path, lib: &LibraryConfig) -> Result<CategoryIndex, PipelineError> {
    let mut index = ingest_manifest(manifest)?.index;
    if let Some(scores) = &lib.scores {
        let scores = read_scores(scores)?;
        index = filter_by_scores(&index, &scores, lib.retain_fraction.unwrap_or(0.3))?;
    }
    Ok(index)
}

/// Builds the sampler for the configured mode.
pub fn build_sampler(config: &PipelineConfig) -> Result<Sampler, PipelineError> {
    let lib = &config.library;
    let manifest = || lib.manifest.as_deref().ok_or_else(|| PipelineError::Config("library.manifest is required".into()));
    let pooled = |pool: CategoryPool, names: &Option<Vec<String>>| -> Result<CategoryIndex, PipelineError> {
        let index = load_index(manifest()?, lib)?;
        Ok(match names {
            Some(names) => index.restrict(pool, names)?,
            None => index,
        })
    };
    let sampler = match &config.mode {
        DatasetMode::Fc => Sampler::Pool(pooled(CategoryPool::FrequentCategories, &lib.frequent_categories)?),
        DatasetMode::Gc => Sampler::Pool(pooled(CategoryPool::GeneralCategories, &lib.general_categories)?),
        DatasetMode::Sfc => Sampler::SingleCategory(attribute_varied(&pooled(
            CategoryPool::FrequentCategories,
            &lib.frequent_categories,
        )?)?),
        DatasetMode::Sgc => Sampler::SingleCategory(attribute_varied(&pooled(
            CategoryPool::GeneralCategories,
            &lib.general_categories,
        )?)?),
        DatasetMode::Mix(m) => Sampler::Mix {
            real: load_index(&m.real_manifest, lib)?,
            synth: load_index(&m.synth_manifest, lib)?,
            real_fraction: m.real_fraction,
        },
    };
    Ok(sampler)
}

/// Everything one image contributes to the merged outputs.
struct ImageOutput {
    entry: ImageEntry,
    image: CocoImage,
    drafts: Vec<InstanceDraft>,
    /// Targets are local, 1-based instance positions within `drafts`.
    expressions: Vec<Expression>,
}

fn label_text<R: Rng + ?Sized>(category: &str, attrs: &AttributeSet, prompt: &str, mix: &LabelTextMix, rng: &mut R) -> String {
    if rng.random::<f64>() < mix.category {
        return category.to_string();
    }
    if !attrs.is_empty() {
        let mut words: Vec<&str> = attrs.as_slice().iter().map(String::as_str).collect();
        words.push(category);
        return words.join(" ");
    }
    if prompt.trim().is_empty() {
        category.to_string()
    } else {
        prompt.trim().to_string()
    }
}

fn scene_ok(mode: &DatasetMode, scene: &Scene, attrs: &[AttributeSet]) -> bool {
    if scene.stack.is_empty() {
        return false;
    }
    match mode {
        DatasetMode::Sfc | DatasetMode::Sgc => scene.stack.len() >= 2 && attrs.iter().any(|a| *a != attrs[0]),
        _ => true,
    }
}

fn render_image(ctx: &Context, index: u64) -> Result<ImageOutput, (u64, ImageError)> {
    let seed = derive_image_seed(ctx.config.global_seed, index);
    render_seeded(ctx, index, seed).map_err(|e| (seed, e))
}

fn render_seeded(ctx: &Context, index: u64, seed: u64) -> Result<ImageOutput, ImageError> {
    let cfg = &ctx.config;
    let image_id = index + 1;
    let attempts = cfg.max_scene_attempts.max(1);
    let mut found = None;
    for attempt in 0..attempts {
        let mut rng = stage_rng(seed, Stage::Segments, attempt);
        let count = sample_object_count(&cfg.layout, &mut rng)? as usize;
        let segments = ctx.sampler.sample(count, &mut rng)?;
        let images = segments.iter().map(|r| ctx.store.load(r)).collect::<Result<Vec<_>, _>>()?;
        let inputs: Vec<LayoutInput> =
            segments.iter().zip(&images).map(|(r, img)| LayoutInput { id: &r.id, mask: &img.mask }).collect();
        let mut layout = build_layout(&inputs, &cfg.layout, ctx.prior.as_ref(), &mut stage_rng(seed, Stage::Layout, attempt))?;
        layout.seed = Some(seed);
        let scene = composite_scene(&layout, &segments, &ctx.store, &cfg.canvas)?;
        let by_id: HashMap<&str, &SegmentRecord> = segments.iter().map(|r| (r.id.as_str(), r)).collect();
        let attrs: Vec<AttributeSet> =
            scene.stack.entries().iter().map(|e| extract_attributes(by_id[e.segment_id.as_str()])).collect();
        if scene_ok(&cfg.mode, &scene, &attrs) {
            found = Some((scene, attrs, count as u32, attempt + 1));
            break;
        }
        log::debug!("image {index}: scene attempt {attempt} rejected");
    }
    let (scene, attrs, num_objects, scene_attempts) = found.ok_or(ImageError::ModeUnsatisfied(attempts))?;
    let (w, h) = (scene.canvas.width(), scene.canvas.height());

    let mut foreground = Mask::new(w, h);
    for v in &scene.visible {
        let (ox, oy) = v.mask.origin;
        for wy in 0..v.mask.window.height() {
            let dst = &mut foreground.row_mut(oy + wy)[ox as usize..];
            for (d, &s) in dst.iter_mut().zip(v.mask.window.row(wy)) {
                *d |= s;
            }
        }
    }
    let request = RelightRequest {
        composite: scene.canvas.pixels.clone(),
        foreground,
        prompt: cfg.relight.prompt.clone(),
        seed: stage_seed(seed, Stage::Relight, 0),
    };
    let relit = ctx.relight.relight(&request).map_err(|e| ImageError::Relight(e.to_string()))?;
    let blended = blend_composite(&scene.canvas, &Canvas::from_image(relit.relit), &scene.visible, &cfg.blend)
        .map_err(|e| ImageError::Blend(e.to_string()))?;

    let mut label_rng = stage_rng(seed, Stage::Labels, 0);
    let mut drafts = Vec::with_capacity(scene.stack.len());
    let mut instances = Vec::with_capacity(scene.stack.len());
    for (k, ((entry, vis), attrs)) in scene.stack.entries().iter().zip(&scene.visible).zip(&attrs).enumerate() {
        let text = label_text(&entry.category, attrs, &entry.prompt, &cfg.label_text_mix, &mut label_rng);
        let draft = InstanceDraft::from_mask(
            entry.category.clone(),
            &vis.mask.to_canvas_mask(),
            text,
            attrs.as_slice().to_vec(),
            entry.target_bin,
            entry.segment_id.clone(),
            entry.source,
            entry.constraint_violated,
        )?;
        instances.push(ExprInstance {
            ann_id: k as u64 + 1,
            category: entry.category.clone(),
            attributes: attrs.clone(),
            bbox: draft.bbox,
            area: draft.area,
            prompt: entry.prompt.clone(),
        });
        drafts.push(draft);
    }
    let bundle = ImageBundle { image_id, width: w, height: h, instances };
    let set = ctx
        .expressions
        .generate(&bundle, stage_seed(seed, Stage::Expressions, 0))
        .map_err(|e| ImageError::Expressions(e.to_string()))?;

    let file_name = format!("{image_id:012}.png");
    let path = ctx.images_dir.join(&file_name);
    write_atomic(&path, &encode_png_rgb(&blended.pixels)).map_err(|source| ImageError::Write { path, source })?;

    let mut warnings = set.warnings;
    warnings.extend(set.shortfalls.iter().map(|(kind, n)| format!("only {n} {kind:?} expressions")));
    let constraint_violations = drafts.iter().filter(|d| d.constraint_violated).count();
    if constraint_violations > 0 {
        warnings.push(format!("{constraint_violations} placements exceeded the occlusion bound"));
    }
    Ok(ImageOutput {
        entry: ImageEntry {
            index,
            image_id,
            seed,
            file_name: file_name.clone(),
            num_objects,
            num_annotations: drafts.len(),
            num_expressions: set.expressions.len(),
            scene_attempts,
            constraint_violations,
            warnings,
        },
        image: CocoImage { id: image_id, file_name, width: w, height: h, num_objects, seed },
        drafts,
        expressions: set.expressions,
    })
}

fn build_context(config: &PipelineConfig) -> Result<Context, PipelineError> {
    config.validate()?;
    let sampler = build_sampler(config)?;
    let mut config = config.clone();
    let prior = match &config.prior_annotations {
        Some(path) => Some(CocoPrior::from_file(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?),
        None => None,
    };
    if config.count_from_prior {
        let p = prior.as_ref().ok_or_else(|| PipelineError::Config("count_from_prior needs prior_annotations".into()))?;
        config.layout.count_distribution =
            CountDistribution::Histogram(p.count_histogram(config.layout.count_min, config.layout.count_max));
    }
    let relight = config.relight.build().map_err(|e| PipelineError::Config(e.to_string()))?;
    let expressions = config.expressions.build().map_err(|e| PipelineError::Config(e.to_string()))?;
    let images_dir = config.output_dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images_dir).map_err(|source| PipelineError::Io { path: images_dir.clone(), source })?;
    Ok(Context { config, sampler, prior, store: SegmentStore::new(), relight, expressions, images_dir })
}

/// Renders `config.num_images` images and writes `annotations.json`,
/// `expressions.jsonl` and `run_manifest.json` under `config.output_dir`.
///
/// Individual image failures are recorded in the manifest; the run fails
/// only when their share exceeds `failure_threshold`, in which case the
/// merged files are not written.
pub fn generate_dataset(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let started = Instant::now();
    let ctx = Arc::new(build_context(config)?);
    let total = ctx.config.num_images;
    let budget = (ctx.config.failure_threshold * total as f64).floor() as usize;
    let failed = AtomicUsize::new(0);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let results: Vec<Result<ImageOutput, (u64, ImageError)>> = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|i| {
                if failed.load(Ordering::Relaxed) > budget {
                    return Err((derive_image_seed(ctx.config.global_seed, i), ImageError::Skipped));
                }
                let r = render_image(&ctx, i);
                if let Err((_, e)) = &r {
                    log::warn!("image {i} failed: {e}");
                    failed.fetch_add(1, Ordering::Relaxed);
                }
                r
            })
            .collect()
    });

    let mut builder = DatasetBuilder::new();
    let mut records = Vec::new();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(out) => {
                let ann_ids = builder.add_image(out.image, out.drafts)?;
                records.extend(out.expressions.into_iter().map(|e| ExpressionRecord {
                    image_id: out.entry.image_id,
                    ann_id: ann_ids[e.target_ann_id as usize - 1],
                    text: e.text,
                    kind: e.kind,
                    predicate: e.predicate,
                    distractor_count: e.distractor_count,
                }));
                entries.push(out.entry);
            }
            Err((seed, e)) => failures.push(ImageFailure { index: i as u64, seed, error: e.to_string() }),
        }
    }
    let real_failures = failures.iter().filter(|f| !f.error.starts_with("skipped")).count();
    if real_failures > budget {
        return Err(PipelineError::TooManyFailures {
            failed: real_failures,
            total,
            threshold: ctx.config.failure_threshold,
            first: failures[0].error.clone(),
        });
    }

    let out_dir = &ctx.config.output_dir;
    emit_coco(&builder.finish(), out_dir)?;
    emit_expressions(&records, out_dir)?;
    let secs = started.elapsed().as_secs_f64();
    let manifest = RunManifest {
        config: ctx.config.clone(),
        images_per_sec: entries.len() as f64 / secs.max(1e-9),
        images: entries,
        failures,
        wall_clock_secs: secs,
    };
    let path = out_dir.join(RUN_MANIFEST_FILE);
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, &bytes).map_err(|source| PipelineError::Io { path, source })?;
    log::info!(
        "{} images in {:.1}s ({:.2} images/s), {} failed",
        manifest.images.len(),
        secs,
        manifest.images_per_sec,
        manifest.failures.len()
    );
    Ok(manifest)
}
