//! Generates a small SFC dataset, then prints its statistics and the
//! validation report, as the `stats` and `validate` subcommands do.
//!
//!     cargo run --release --example dataset_stats [out_dir]

use std::path::PathBuf;

use segforge::annotate::validate_annotations;
use segforge::demo::{write_demo_library, DemoSpec};
use segforge::pipeline::{compute_stats, generate_dataset, DatasetMode, LibraryConfig, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("segforge-stats"));
    let lib = write_demo_library(&out.join("library"), &DemoSpec::default())?;
    let mut config = PipelineConfig {
        num_images: 30,
        mode: DatasetMode::Sfc,
        library: LibraryConfig { manifest: Some(lib.manifest), ..Default::default() },
        output_dir: out.join("dataset"),
        ..Default::default()
    };
    config.layout.canvas_w = 256;
    config.layout.canvas_h = 256;
    generate_dataset(&config)?;

    let stats = compute_stats(&config.output_dir)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    let report = validate_annotations(&config.output_dir)?;
    println!("validation: {} violations over {} annotations", report.violations.len(), report.annotations);
    Ok(())
}
