//! Pastes three overlapping segments and prints each instance's original
//! and visible area, then writes the composite and visible masks as PNGs.
//!
//!     cargo run --example composite_and_masks [out_dir]

use std::path::PathBuf;

use segforge::compositor::{composite_scene, CanvasConfig};
use segforge::demo::{write_demo_library, DemoSpec};
use segforge::io::{encode_png_mask, encode_png_rgb};
use segforge::layout::{LayoutSpec, Placement, SizeBin};
use segforge::library::SegmentStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("segforge-composite"));
    let spec = DemoSpec { categories: vec!["ball".into(), "box".into(), "star".into()], per_category: 1, ..Default::default() };
    let lib = write_demo_library(&out, &spec)?;

    let placements = lib
        .records
        .iter()
        .enumerate()
        .map(|(z, r)| Placement {
            segment_id: r.id.clone(),
            center_x: 50.0 + 25.0 * z as f64,
            center_y: 60.0,
            scale: 1.5,
            target_bin: SizeBin::Medium,
            z: z as u32,
            constraint_violated: false,
        })
        .collect();
    let layout = LayoutSpec { placements, canvas_w: 160, canvas_h: 120, seed: None };
    let scene = composite_scene(&layout, &lib.records, &SegmentStore::new(), &CanvasConfig::default())?;

    std::fs::write(out.join("composite.png"), encode_png_rgb(&scene.canvas.pixels))?;
    for (entry, vis) in scene.stack.entries().iter().zip(&scene.visible) {
        println!(
            "z={} {:<16} original {:>5} px, visible {:>5} px",
            entry.z,
            entry.segment_id,
            entry.original.count(),
            vis.visible_area_px
        );
        std::fs::write(out.join(format!("visible-{}.png", entry.z)), encode_png_mask(&vis.mask.to_canvas_mask()))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
