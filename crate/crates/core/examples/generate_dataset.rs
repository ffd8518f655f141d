//! End-to-end run: procedural library, config file, parallel generation.
//! The config is written next to the output so the CLI can replay it:
//!
//!     cargo run --release --example generate_dataset [out_dir] [mode]
//!     cargo run --release --bin segforge -- generate --config <out_dir>/config.json

use std::path::PathBuf;

use segforge::demo::{write_demo_library, DemoSpec};
use segforge::pipeline::{generate_dataset, DatasetMode, LibraryConfig, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("segforge-generate"));
    let mode = match args.next().as_deref() {
        None | Some("FC") => DatasetMode::Fc,
        Some("GC") => DatasetMode::Gc,
        Some("SFC") => DatasetMode::Sfc,
        Some("SGC") => DatasetMode::Sgc,
        Some(other) => return Err(format!("unknown mode {other}").into()),
    };
    let lib = write_demo_library(&out.join("library"), &DemoSpec::default())?;

    let mut config = PipelineConfig {
        num_images: 20,
        global_seed: 2024,
        mode,
        library: LibraryConfig { manifest: Some(lib.manifest), ..Default::default() },
        output_dir: out.join("dataset"),
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..Default::default()
    };
    config.apply_env()?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)?)?;

    let manifest = generate_dataset(&config)?;
    for img in manifest.images.iter().take(5) {
        println!(
            "{}: {} placed, {} annotated, {} expressions",
            img.file_name, img.num_objects, img.num_annotations, img.num_expressions
        );
    }
    println!("{:.2} images/s, output in {}", manifest.images_per_sec, config.output_dir.display());
    Ok(())
}
