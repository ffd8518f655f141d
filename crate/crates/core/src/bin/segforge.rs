use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use segforge::annotate::validate_annotations;
use segforge::library::{filter_by_scores, ingest_manifest, read_scores};
use segforge::pipeline::{compute_stats, generate_dataset, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "segforge", version, about = "Compose synthetic segmentation and grounding datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a segment manifest and summarize it.
    Ingest { manifest: PathBuf },
    /// Keep the top-scoring fraction of a manifest and print it as JSONL.
    Filter {
        /// Defaults to `manifest.jsonl` next to the scores file.
        manifest: Option<PathBuf>,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        retain: f64,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a dataset from a JSON config.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print distribution statistics of a generated dataset.
    Stats { dataset_dir: PathBuf },
    /// Check a generated dataset for annotation and expression errors.
    Validate { dataset_dir: PathBuf },
}

fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    println!("{text}");
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest { manifest } => {
            let ingested = ingest_manifest(&manifest)?;
            let index = &ingested.index;
            let per_category: serde_json::Map<String, serde_json::Value> =
                index.categories().map(|c| (c.to_string(), index.ids(c).len().into())).collect();
            print_json(&serde_json::json!({
                "segments": index.num_segments(),
                "categories": per_category,
                "rejected": ingested.rejected,
            }));
        }
        Command::Filter { manifest, scores, retain, output } => {
            let manifest = manifest
                .unwrap_or_else(|| scores.parent().unwrap_or(Path::new(".")).join("manifest.jsonl"));
            let index = ingest_manifest(&manifest)?.index;
            let kept = filter_by_scores(&index, &read_scores(&scores)?, retain)?;
            let mut text = String::new();
            for rec in kept.iter() {
                text.push_str(&serde_json::to_string(rec).expect("record serializes"));
                text.push('\n');
            }
            match output {
                Some(path) => std::fs::write(&path, text).map_err(|source| PipelineError::Io { path, source })?,
                None => std::io::stdout().write_all(text.as_bytes()).map_err(config_err)?,
            }
            eprintln!("kept {} of {} segments", kept.num_segments(), index.num_segments());
        }
        Command::Generate { config } => {
            let config = PipelineConfig::load(&config)?;
            let manifest = generate_dataset(&config)?;
            eprintln!(
                "wrote {} images ({} failed) to {} at {:.2} images/s",
                manifest.images.len(),
                manifest.failures.len(),
                config.output_dir.display(),
                manifest.images_per_sec
            );
        }
        Command::Stats { dataset_dir } => print_json(&compute_stats(&dataset_dir).map_err(config_err)?),
        Command::Validate { dataset_dir } => {
            let report = validate_annotations(&dataset_dir).map_err(config_err)?;
            print_json(&report);
            if !report.passed() {
                return Err(PipelineError::Validation(format!("{} violations", report.violations.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
