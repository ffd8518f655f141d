//! Writes a small procedural library, ingests it and keeps the top 30%
//! of segments by mean quality score.
//!
//!     cargo run --example ingest_and_filter [out_dir]

use std::path::PathBuf;

use segforge::demo::{write_demo_library, DemoSpec};
use segforge::library::{filter_by_scores, ingest_manifest, read_scores, retained_count};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("segforge-ingest"));
    let lib = write_demo_library(&out, &DemoSpec::default())?;
    let ingested = ingest_manifest(&lib.manifest)?;
    let index = ingested.index;
    println!("{} segments in {} categories", index.num_segments(), index.num_categories());

    let scores = read_scores(&lib.scores)?;
    let kept = filter_by_scores(&index, &scores, 0.3)?;
    assert_eq!(kept.num_segments(), retained_count(index.num_segments(), 0.3));
    for cat in kept.categories() {
        println!("  {cat:<6} {:>2} -> {:>2}", index.ids(cat).len(), kept.ids(cat).len());
    }
    let best = kept.iter().map(|r| (scores[&r.id].mean(), r.id.as_str())).fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    println!("best segment: {} (mean score {:.3})", best.1, best.0);
    Ok(())
}
