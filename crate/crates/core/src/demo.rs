//! Procedural segment library for demos and tests.
//!
//! Draws simple shapes per category with a color and an optional surface
//! pattern, and writes them out the way a real library would be laid out:
//! one raster PNG and one mask PNG per segment, a JSONL manifest and a
//! JSONL quality-scores file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io::{encode_png_mask, encode_png_rgb, write_atomic};
use crate::library::{QualityScores, SegmentRecord, SegmentSource};
use crate::mask::Mask;

pub const DEFAULT_CATEGORIES: [&str; 8] = ["ball", "box", "kite", "cup", "star", "leaf", "tree", "ring"];

pub const COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [200, 40, 40]),
    ("green", [50, 160, 60]),
    ("blue", [40, 80, 200]),
    ("yellow", [230, 200, 40]),
    ("purple", [140, 60, 170]),
    ("orange", [240, 130, 30]),
];

pub const PATTERNS: [&str; 3] = ["plain", "striped", "dotted"];

#[derive(Clone, Debug)]
pub struct DemoSpec {
    pub categories: Vec<String>,
    pub per_category: usize,
    pub seed: u64,
    pub source: SegmentSource,
    /// Prepended to every segment id, so several libraries can be mixed.
    pub id_prefix: String,
    /// Raster side lengths are drawn from this range.
    pub min_side: u32,
    pub max_side: u32,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            per_category: 12,
            seed: 7,
            source: SegmentSource::Synthetic,
            id_prefix: String::new(),
            min_side: 24,
            max_side: 72,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DemoLibrary {
    pub manifest: PathBuf,
    pub scores: PathBuf,
    pub records: Vec<SegmentRecord>,
}

/// Whether normalized point (u, v) in [-1, 1]² lies inside the category's shape.
fn inside(category: &str, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    match category {
        "ball" => r2 <= 0.9,
        "box" => u.abs() <= 0.85 && v.abs() <= 0.7,
        "kite" => u.abs() / 0.8 + v.abs() <= 0.95,
        "cup" => {
            let body = (-0.8..=0.4).contains(&u) && v.abs() <= 0.8;
            let (hu, hv) = (u - 0.45, v);
            let handle = (hu * hu + hv * hv).sqrt();
            body || (u > 0.4 && (0.2..=0.45).contains(&handle))
        }
        "star" => {
            let r = r2.sqrt();
            let theta = v.atan2(u) + std::f64::consts::FRAC_PI_2;
            let k = (theta * 5.0 / (2.0 * std::f64::consts::PI)).rem_euclid(1.0);
            let edge = 0.4 + 0.55 * (1.0 - 2.0 * (k - 0.5).abs());
            r <= edge
        }
        "leaf" => (u / 0.95).powi(2) + (v / 0.5).powi(2) <= 1.0,
        "tree" => {
            let crown = (-0.95..=0.45).contains(&v) && u.abs() <= (v + 0.95) * 0.6;
            let trunk = v > 0.45 && v <= 0.95 && u.abs() <= 0.15;
            crown || trunk
        }
        "ring" => (0.35..=0.9).contains(&r2),
        // Unknown categories get a rounded square.
        _ => u.powi(4) + v.powi(4) <= 0.7,
    }
}

fn shade(base: [u8; 3], pattern: &str, x: u32, y: u32, u: f64, v: f64) -> Rgb<u8> {
    let mut k = 1.0 - 0.25 * (u * u + v * v).min(1.0) + 0.1 * (-u - v) / 2.0;
    match pattern {
        "striped" if ((x + y) / 4).is_multiple_of(2) => k *= 0.55,
        "dotted" if (x % 8).abs_diff(4) + (y % 8).abs_diff(4) <= 2 => k *= 0.45,
        _ => {}
    }
    Rgb(base.map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8))
}

/// Draws one segment; returns the raster and its mask.
pub fn draw_segment(category: &str, color: [u8; 3], pattern: &str, w: u32, h: u32) -> (RgbImage, Mask) {
    let to_uv = |x: u32, y: u32| {
        (
            (x as f64 + 0.5) / w as f64 * 2.0 - 1.0,
            (y as f64 + 0.5) / h as f64 * 2.0 - 1.0,
        )
    };
    let mask = Mask::from_fn(w, h, |x, y| {
        let (u, v) = to_uv(x, y);
        inside(category, u, v)
    });
    let rgb = RgbImage::from_fn(w, h, |x, y| {
        let (u, v) = to_uv(x, y);
        if mask.get(x, y) {
            shade(color, pattern, x, y, u, v)
        } else {
            Rgb([0, 0, 0])
        }
    });
    (rgb, mask)
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    scores: QualityScores,
}

/// Writes a procedural library under `dir` and returns its records with
/// absolute paths.
pub fn write_demo_library(dir: &Path, spec: &DemoSpec) -> io::Result<DemoLibrary> {
    let seg_dir = dir.join("segments");
    fs::create_dir_all(&seg_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = String::new();
    let mut scores = String::new();
    let mut records = Vec::new();
    for category in &spec.categories {
        for k in 0..spec.per_category {
            let id = format!("{}{category}-{k:04}", spec.id_prefix);
            let (color_name, color) = COLORS[rng.random_range(0..COLORS.len())];
            let pattern = PATTERNS[rng.random_range(0..PATTERNS.len())];
            let side = spec.min_side.max(2)..=spec.max_side.max(spec.min_side.max(2));
            let (w, h) = (rng.random_range(side.clone()), rng.random_range(side));
            let (rgb, mask) = draw_segment(category, color, pattern, w, h);
            if mask.is_empty() {
                continue;
            }
            let raster = format!("segments/{id}.png");
            let mask_file = format!("segments/{id}.mask.png");
            write_atomic(&dir.join(&raster), &encode_png_rgb(&rgb))?;
            write_atomic(&dir.join(&mask_file), &encode_png_mask(&mask))?;

            let mut attributes = vec![color_name.to_string()];
            if pattern != "plain" {
                attributes.push(pattern.to_string());
            }
            let prompt = format!("a {} {category} on a plain background", attributes.join(" "));
            let rec = SegmentRecord {
                id: id.clone(),
                category: category.clone(),
                prompt,
                attributes,
                raster_path: raster.into(),
                mask_path: mask_file.into(),
                area_px: mask.count(),
                source: spec.source,
            };
            manifest.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            manifest.push('\n');
            let s = QualityScores {
                integrity: rng.random(),
                is_object: rng.random(),
                mask_quality: rng.random(),
            };
            scores.push_str(&serde_json::to_string(&ScoreLine { id: &id, scores: s }).expect("scores serialize"));
            scores.push('\n');
            records.push(SegmentRecord {
                raster_path: dir.join(&rec.raster_path),
                mask_path: dir.join(&rec.mask_path),
                ..rec
            });
        }
    }
    let manifest_path = dir.join("manifest.jsonl");
    let scores_path = dir.join("scores.jsonl");
    write_atomic(&manifest_path, manifest.as_bytes())?;
    write_atomic(&scores_path, scores.as_bytes())?;
    Ok(DemoLibrary { manifest: manifest_path, scores: scores_path, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{ingest_manifest, load_segment_raster};

    #[test]
    fn every_shape_is_non_empty() {
        for cat in DEFAULT_CATEGORIES.iter().chain(&["mystery"]) {
            let (_, mask) = draw_segment(cat, [10, 20, 30], "plain", 40, 30);
            assert!(mask.count() > 100, "{cat}");
        }
    }

    #[test]
    fn written_library_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DemoSpec { per_category: 2, categories: vec!["ball".into(), "cup".into()], ..Default::default() };
        let lib = write_demo_library(dir.path(), &spec).unwrap();
        let ingested = ingest_manifest(&lib.manifest).unwrap();
        assert!(ingested.rejected.is_empty());
        assert_eq!(ingested.index.num_segments(), 4);
        for rec in &lib.records {
            let img = load_segment_raster(rec).unwrap();
            assert_eq!(img.mask.count(), rec.area_px);
        }
    }
}
