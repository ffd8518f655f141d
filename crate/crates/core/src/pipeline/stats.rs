use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::annotate::{read_coco, read_expressions, AnnotateError, ANNOTATIONS_FILE, EXPRESSIONS_FILE};
use crate::layout::SizeBin;

/// Distribution summary of a generated dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StatsReport {
    pub images: usize,
    pub annotations: usize,
    pub expressions: usize,
    /// Placed objects per image, before occlusion removal.
    pub object_count_histogram: BTreeMap<u32, u64>,
    /// Annotations per image, after occlusion removal.
    pub annotated_count_histogram: BTreeMap<usize, u64>,
    /// Small/medium/large shares by visible area.
    pub size_bins_visible: [f64; 3],
    /// Small/medium/large shares by the bin the layout aimed for.
    pub size_bins_target: [f64; 3],
    pub category_histogram: BTreeMap<String, u64>,
    /// Largest gap between a category's share and the uniform share.
    pub category_max_deviation: f64,
    pub constraint_violations: usize,
    pub expressions_per_type: BTreeMap<String, u64>,
    pub categories_per_image: BTreeMap<usize, u64>,
    pub images_with_9_plus_expressions: usize,
}

fn shares(counts: [u64; 3]) -> [f64; 3] {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [0.0; 3];
    }
    counts.map(|c| c as f64 / total as f64)
}

/// Reads `annotations.json` (and `expressions.jsonl` when present) from `dir`.
pub fn compute_stats(dir: &Path) -> Result<StatsReport, AnnotateError> {
    let ds = read_coco(&dir.join(ANNOTATIONS_FILE))?;
    let expr_path = dir.join(EXPRESSIONS_FILE);
    let exprs = if expr_path.exists() { read_expressions(&expr_path)? } else { Vec::new() };
    let names: HashMap<u64, &str> = ds.categories.iter().map(|c| (c.id, c.name.as_str())).collect();

    let mut r = StatsReport {
        images: ds.images.len(),
        annotations: ds.annotations.len(),
        expressions: exprs.len(),
        ..Default::default()
    };
    for img in &ds.images {
        *r.object_count_histogram.entry(img.num_objects).or_default() += 1;
    }
    let mut per_image: HashMap<u64, (usize, BTreeSet<u64>)> = ds.images.iter().map(|i| (i.id, Default::default())).collect();
    let (mut visible, mut target) = ([0u64; 3], [0u64; 3]);
    for a in &ds.annotations {
        visible[SizeBin::of_area(a.area).index()] += 1;
        if let Some(bin) = a.size_bin {
            target[bin.index()] += 1;
        }
        let name = names.get(&a.category_id).copied().unwrap_or("?");
        *r.category_histogram.entry(name.to_string()).or_default() += 1;
        if a.constraint_violated {
            r.constraint_violations += 1;
        }
        let e = per_image.entry(a.image_id).or_default();
        e.0 += 1;
        e.1.insert(a.category_id);
    }
    r.size_bins_visible = shares(visible);
    r.size_bins_target = shares(target);
    if !r.category_histogram.is_empty() {
        let uniform = 1.0 / r.category_histogram.len() as f64;
        let total = r.annotations as f64;
        r.category_max_deviation = r
            .category_histogram
            .values()
            .map(|&c| (c as f64 / total - uniform).abs())
            .fold(0.0, f64::max);
    }
    for (n, cats) in per_image.values() {
        *r.annotated_count_histogram.entry(*n).or_default() += 1;
        *r.categories_per_image.entry(cats.len()).or_default() += 1;
    }

    let mut per_image_exprs: HashMap<u64, usize> = HashMap::new();
    for e in &exprs {
        let kind = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        *r.expressions_per_type.entry(kind).or_default() += 1;
        *per_image_exprs.entry(e.image_id).or_default() += 1;
    }
    r.images_with_9_plus_expressions = per_image_exprs.values().filter(|&&n| n >= 9).count();
    Ok(r)
}
