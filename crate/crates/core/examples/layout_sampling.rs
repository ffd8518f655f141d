//! Samples layouts with the default priors and checks them against the
//! brute-force occlusion oracle.
//!
//!     cargo run --release --example layout_sampling

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segforge::demo::draw_segment;
use segforge::layout::{build_layout, sample_object_count, LayoutConfig, LayoutInput, SizeBin};
use segforge::oracle::check_overlap_constraint;
use segforge::Mask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = LayoutConfig { canvas_w: 256, canvas_h: 256, ..Default::default() };
    let shapes = ["ball", "box", "kite", "star"];
    let masks: HashMap<String, Mask> =
        shapes.iter().map(|s| (s.to_string(), draw_segment(s, [200, 0, 0], "plain", 48, 40).1)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut bins, mut flagged, mut unexplained, mut worst) = ([0usize; 3], 0, 0, 0.0f64);
    for _ in 0..200 {
        let n = sample_object_count(&config, &mut rng)? as usize;
        let inputs: Vec<LayoutInput> =
            (0..n).map(|i| LayoutInput { id: shapes[i % shapes.len()], mask: &masks[shapes[i % shapes.len()]] }).collect();
        let layout = build_layout(&inputs, &config, None, &mut rng)?;
        let hidden = check_overlap_constraint(&layout, &masks);
        for (i, (p, h)) in layout.placements.iter().zip(&hidden).enumerate() {
            bins[p.target_bin.index()] += 1;
            flagged += usize::from(p.constraint_violated);
            // An over-occluded instance must have a flagged placement above it.
            if *h > config.max_occlusion && !layout.placements[i + 1..].iter().any(|q| q.constraint_violated) {
                unexplained += 1;
            }
            worst = worst.max(*h);
        }
    }
    let total: usize = bins.iter().sum();
    for bin in SizeBin::ALL {
        println!("{bin:?}: {:.3}", bins[bin.index()] as f64 / total as f64);
    }
    println!("{total} placements, {flagged} flagged, worst occlusion {worst:.3}, {unexplained} over the bound without a flag");
    Ok(())
}
