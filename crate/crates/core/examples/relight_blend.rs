//! Relights a composite with the stub backend and blends it back with
//! area-dependent weights: small instances keep more of their original
//! lightness than large ones.
//!
//!     cargo run --example relight_blend [out_dir]

use std::path::PathBuf;

use segforge::blend::{blend_composite, compute_blend_weight, instance_weights, BlendParams};
use segforge::compositor::{composite_scene, Canvas, CanvasConfig};
use segforge::demo::{write_demo_library, DemoSpec};
use segforge::io::encode_png_rgb;
use segforge::layout::{LayoutSpec, Placement, SizeBin};
use segforge::library::SegmentStore;
use segforge::relight::{RelightBackend, RelightRequest, StubRelight};
use segforge::Mask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("segforge-relight"));
    let params = BlendParams::default();
    for (name, area) in [("A_min", 100), ("mid", 500), ("A_max", 900)] {
        println!("weight at {name:<5} = {:.4}", compute_blend_weight(area, 100, 900, &params)?);
    }

    let spec = DemoSpec { categories: vec!["ball".into(), "leaf".into()], per_category: 1, ..Default::default() };
    let lib = write_demo_library(&out, &spec)?;
    let layout = LayoutSpec {
        placements: vec![
            Placement { segment_id: lib.records[0].id.clone(), center_x: 40.0, center_y: 64.0, scale: 0.6, target_bin: SizeBin::Small, z: 0, constraint_violated: false },
            Placement { segment_id: lib.records[1].id.clone(), center_x: 120.0, center_y: 64.0, scale: 2.0, target_bin: SizeBin::Medium, z: 1, constraint_violated: false },
        ],
        canvas_w: 192,
        canvas_h: 128,
        seed: Some(3),
    };
    let scene = composite_scene(&layout, &lib.records, &SegmentStore::new(), &CanvasConfig::default())?;
    let mut foreground = Mask::new(192, 128);
    for v in &scene.visible {
        let m = v.mask.to_canvas_mask();
        for y in 0..128 {
            for x in 0..192 {
                if m.get(x, y) {
                    foreground.set(x, y, true);
                }
            }
        }
    }
    let request = RelightRequest { composite: scene.canvas.pixels.clone(), foreground, prompt: "a beach at sunset".into(), seed: 3 };
    let relit = StubRelight::new().relight(&request)?.relit;
    let blended = blend_composite(&scene.canvas, &Canvas::from_image(relit.clone()), &scene.visible, &params)?;
    for (v, a) in scene.visible.iter().zip(instance_weights(&scene.visible, &params)) {
        println!("visible area {:>5} px -> weight {a:.4}", v.visible_area_px);
    }
    std::fs::write(out.join("naive.png"), encode_png_rgb(&scene.canvas.pixels))?;
    std::fs::write(out.join("relit.png"), encode_png_rgb(&relit))?;
    std::fs::write(out.join("blended.png"), encode_png_rgb(&blended.pixels))?;
    println!("wrote naive/relit/blended PNGs to {}", out.display());
    Ok(())
}
