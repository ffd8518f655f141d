//! Boxes, RLE masks and COCO-format emission and validation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::SizeBin;
use crate::library::SegmentSource;
use crate::mask::{BBox, Mask};
use crate::oracle::{relation_oracle, OracleInstance};
use crate::refexpr::{ExpressionType, Predicate};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const EXPRESSIONS_FILE: &str = "expressions.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("rle counts sum to {got}, expected {expected}")]
    MalformedRle { expected: u64, got: u64 },
    #[error("duplicate {kind} id {id}")]
    IdCollision { kind: &'static str, id: u64 },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Tight box of the foreground.
pub fn bbox_from_mask(mask: &Mask) -> Result<BBox, AnnotateError> {
    mask.bbox().ok_or(AnnotateError::EmptyMask)
}

/// Uncompressed COCO run-length mask: column-major runs alternating
/// background/foreground, starting with background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

pub fn encode_rle(mask: &Mask) -> RleMask {
    let (w, h) = (mask.width(), mask.height());
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = u8::from(mask.get(x, y));
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask { size: [h, w], counts }
}

pub fn decode_rle(rle: &RleMask) -> Result<Mask, AnnotateError> {
    let [h, w] = rle.size;
    let expected = u64::from(h) * u64::from(w);
    let got: u64 = rle.counts.iter().map(|&c| u64::from(c)).sum();
    if got != expected {
        return Err(AnnotateError::MalformedRle { expected, got });
    }
    let mut mask = Mask::new(w, h);
    let mut idx = 0u64;
    for (i, &run) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            for k in idx..idx + u64::from(run) {
                let (x, y) = ((k / u64::from(h)) as u32, (k % u64::from(h)) as u32);
                mask.set(x, y, true);
            }
        }
        idx += u64::from(run);
    }
    Ok(mask)
}

/// Foreground pixel count straight from the runs.
pub fn rle_area(rle: &RleMask) -> u64 {
    rle.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    /// Instances placed by the layout, before occlusion removal.
    #[serde(default)]
    pub num_objects: u32,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub area: u64,
    pub segmentation: RleMask,
    pub iscrowd: u8,
    /// Text paired with the box for grounding: the category name or a short phrase.
    #[serde(default)]
    pub label_text: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub size_bin: Option<SizeBin>,
    #[serde(default)]
    pub segment_id: String,
    pub source: Option<SegmentSource>,
    #[serde(default)]
    pub constraint_violated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One line of `expressions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionRecord {
    pub image_id: u64,
    pub ann_id: u64,
    pub text: String,
    #[serde(rename = "type")]
    pub kind: ExpressionType,
    pub predicate: Predicate,
    pub distractor_count: u32,
}

/// An instance ready for annotation, before ids are assigned.
#[derive(Clone, Debug)]
pub struct InstanceDraft {
    pub category: String,
    pub bbox: BBox,
    pub area: u64,
    pub segmentation: RleMask,
    pub label_text: String,
    pub attributes: Vec<String>,
    pub size_bin: SizeBin,
    pub segment_id: String,
    pub source: SegmentSource,
    pub constraint_violated: bool,
}

impl InstanceDraft {
    /// Derives box, area and RLE from a canvas-sized visible mask.
    #[allow(clippy::too_many_arguments)]
    pub fn from_mask(
        category: impl Into<String>,
        mask: &Mask,
        label_text: impl Into<String>,
        attributes: Vec<String>,
        size_bin: SizeBin,
        segment_id: impl Into<String>,
        source: SegmentSource,
        constraint_violated: bool,
    ) -> Result<Self, AnnotateError> {
        Ok(Self {
            category: category.into(),
            bbox: bbox_from_mask(mask)?,
            area: mask.count(),
            segmentation: encode_rle(mask),
            label_text: label_text.into(),
            attributes,
            size_bin,
            segment_id: segment_id.into(),
            source,
            constraint_violated,
        })
    }
}

/// Assigns dense image, annotation and category ids in the order scenes are added.
#[derive(Debug, Default)]
pub struct DatasetBuilder {
    dataset: CocoDataset,
    category_ids: HashMap<String, u64>,
    image_ids: HashSet<u64>,
}

impl DatasetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn category_id(&mut self, name: &str) -> u64 {
        if let Some(&id) = self.category_ids.get(name) {
            return id;
        }
        let id = self.dataset.categories.len() as u64 + 1;
        self.dataset.categories.push(CocoCategory { id, name: name.to_string() });
        self.category_ids.insert(name.to_string(), id);
        id
    }

    /// Adds an image and its instances; returns the new annotation ids.
    pub fn add_image(&mut self, image: CocoImage, instances: Vec<InstanceDraft>) -> Result<Vec<u64>, AnnotateError> {
        if !self.image_ids.insert(image.id) {
            return Err(AnnotateError::IdCollision { kind: "image", id: image.id });
        }
        let image_id = image.id;
        self.dataset.images.push(image);
        let mut ids = Vec::with_capacity(instances.len());
        for inst in instances {
            if inst.area == 0 {
                return Err(AnnotateError::EmptyMask);
            }
            let id = self.dataset.annotations.len() as u64 + 1;
            let category_id = self.category_id(&inst.category);
            self.dataset.annotations.push(CocoAnnotation {
                id,
                image_id,
                category_id,
                bbox: inst.bbox,
                area: inst.area,
                segmentation: inst.segmentation,
                iscrowd: 0,
                label_text: inst.label_text,
                attributes: inst.attributes,
                size_bin: Some(inst.size_bin),
                segment_id: inst.segment_id,
                source: Some(inst.source),
                constraint_violated: inst.constraint_violated,
            });
            ids.push(id);
        }
        Ok(ids)
    }

    pub fn finish(self) -> CocoDataset {
        self.dataset
    }
}

fn check_unique_ids(dataset: &CocoDataset) -> Result<(), AnnotateError> {
    let mut seen = HashSet::new();
    for i in &dataset.images {
        if !seen.insert(i.id) {
            return Err(AnnotateError::IdCollision { kind: "image", id: i.id });
        }
    }
    seen.clear();
    for a in &dataset.annotations {
        if !seen.insert(a.id) {
            return Err(AnnotateError::IdCollision { kind: "annotation", id: a.id });
        }
    }
    Ok(())
}

/// Writes `annotations.json` with images and annotations sorted by id.
pub fn emit_coco(dataset: &CocoDataset, out_dir: &Path) -> Result<PathBuf, AnnotateError> {
    check_unique_ids(dataset)?;
    let mut sorted = dataset.clone();
    sorted.images.sort_by_key(|i| i.id);
    sorted.annotations.sort_by_key(|a| a.id);
    let path = out_dir.join(ANNOTATIONS_FILE);
    let bytes = serde_json::to_vec(&sorted).expect("dataset serializes");
    crate::io::write_atomic(&path, &bytes).map_err(|source| AnnotateError::Write { path: path.clone(), source })?;
    Ok(path)
}

/// Writes `expressions.jsonl`, one record per line in the given order.
pub fn emit_expressions(records: &[ExpressionRecord], out_dir: &Path) -> Result<PathBuf, AnnotateError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("expression serializes");
        buf.push(b'\n');
    }
    let path = out_dir.join(EXPRESSIONS_FILE);
    crate::io::write_atomic(&path, &buf).map_err(|source| AnnotateError::Write { path: path.clone(), source })?;
    Ok(path)
}

pub fn read_coco(path: &Path) -> Result<CocoDataset, AnnotateError> {
    let file = File::open(path).map_err(|source| AnnotateError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| AnnotateError::Parse { path: path.to_path_buf(), source })
}

pub fn read_expressions(path: &Path) -> Result<Vec<ExpressionRecord>, AnnotateError> {
    let read_err = |source| AnnotateError::Read { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(read_err)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(read_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| AnnotateError::Parse { path: path.to_path_buf(), source })?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MalformedRle,
    SizeMismatch,
    AreaMismatch,
    BBoxNotTight,
    EmptyMask,
    DuplicateId,
    DanglingReference,
    SparseCategoryIds,
    Overlap,
    MissingImageFile,
    ExpressionTarget,
    ExpressionNotUnique,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub image_id: Option<u64>,
    pub ann_id: Option<u64>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub images: usize,
    pub annotations: usize,
    pub expressions: usize,
    pub counts: BTreeMap<ViolationKind, usize>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, image_id: Option<u64>, ann_id: Option<u64>, detail: String) {
        *self.counts.entry(kind).or_default() += 1;
        self.violations.push(Violation { kind, image_id, ann_id, detail });
    }
}

/// Checks a dataset directory (`annotations.json`, optional
/// `expressions.jsonl`, optional `images/`).
pub fn validate_annotations(dir: &Path) -> Result<ValidationReport, AnnotateError> {
    let dataset = read_coco(&dir.join(ANNOTATIONS_FILE))?;
    let expr_path = dir.join(EXPRESSIONS_FILE);
    let expressions = if expr_path.exists() { read_expressions(&expr_path)? } else { Vec::new() };
    let images_dir = dir.join(IMAGES_DIR);
    let check_files = images_dir.is_dir();
    Ok(validate_dataset(&dataset, &expressions, check_files.then_some(images_dir.as_path())))
}

/// Checks area/RLE agreement, box tightness, id resolution, per-image mask
/// disjointness and expression uniqueness.
pub fn validate_dataset(dataset: &CocoDataset, expressions: &[ExpressionRecord], images_dir: Option<&Path>) -> ValidationReport {
    use ViolationKind::*;
    let mut report = ValidationReport {
        images: dataset.images.len(),
        annotations: dataset.annotations.len(),
        expressions: expressions.len(),
        ..Default::default()
    };

    let mut images: HashMap<u64, &CocoImage> = HashMap::new();
    for img in &dataset.images {
        if images.insert(img.id, img).is_some() {
            report.push(DuplicateId, Some(img.id), None, "duplicate image id".into());
        }
        if let Some(dir) = images_dir {
            if !dir.join(&img.file_name).is_file() {
                report.push(MissingImageFile, Some(img.id), None, img.file_name.clone());
            }
        }
    }
    let mut categories: HashMap<u64, &str> = HashMap::new();
    for c in &dataset.categories {
        if categories.insert(c.id, &c.name).is_some() {
            report.push(DuplicateId, None, None, format!("duplicate category id {}", c.id));
        }
    }
    let cat_ids: BTreeSet<u64> = categories.keys().copied().collect();
    if cat_ids.iter().copied().ne(1..=cat_ids.len() as u64) {
        report.push(SparseCategoryIds, None, None, format!("category ids {cat_ids:?}"));
    }

    let mut ann_ids = HashSet::new();
    let mut decoded: BTreeMap<u64, Vec<(u64, &RleMask)>> = BTreeMap::new();
    for a in &dataset.annotations {
        let (img_id, ann_id) = (Some(a.image_id), Some(a.id));
        if !ann_ids.insert(a.id) {
            report.push(DuplicateId, img_id, ann_id, "duplicate annotation id".into());
        }
        if !categories.contains_key(&a.category_id) {
            report.push(DanglingReference, img_id, ann_id, format!("category {}", a.category_id));
        }
        let Some(img) = images.get(&a.image_id) else {
            report.push(DanglingReference, img_id, ann_id, format!("image {}", a.image_id));
            continue;
        };
        if a.segmentation.size != [img.height, img.width] {
            report.push(SizeMismatch, img_id, ann_id, format!("rle size {:?}", a.segmentation.size));
        }
        let mask = match decode_rle(&a.segmentation) {
            Ok(m) => m,
            Err(e) => {
                report.push(MalformedRle, img_id, ann_id, e.to_string());
                continue;
            }
        };
        let area = mask.count();
        if area != a.area {
            report.push(AreaMismatch, img_id, ann_id, format!("area field {} vs mask {}", a.area, area));
        }
        match mask.bbox() {
            None => report.push(EmptyMask, img_id, ann_id, "empty segmentation".into()),
            Some(b) if b != a.bbox => report.push(BBoxNotTight, img_id, ann_id, format!("bbox {:?} vs mask {:?}", a.bbox, b)),
            Some(_) => {}
        }
        if a.segmentation.size == [img.height, img.width] {
            decoded.entry(a.image_id).or_default().push((a.id, &a.segmentation));
        }
    }

    for (image_id, anns) in &decoded {
        // Column-major pixel index -> first annotation covering it.
        let n = images.get(image_id).map_or(0, |i| i.width as usize * i.height as usize);
        let mut owner: Vec<u64> = vec![0; n];
        let mut pairs: BTreeSet<(u64, u64)> = BTreeSet::new();
        for &(ann_id, rle) in anns {
            let mut idx = 0usize;
            for (i, &run) in rle.counts.iter().enumerate() {
                let end = (idx + run as usize).min(n);
                if i % 2 == 1 {
                    for o in &mut owner[idx..end] {
                        if *o == 0 {
                            *o = ann_id;
                        } else {
                            pairs.insert(((*o).min(ann_id), (*o).max(ann_id)));
                        }
                    }
                }
                idx = end;
            }
        }
        for (a, b) in pairs {
            report.push(Overlap, Some(*image_id), Some(a), format!("annotations {a} and {b} share pixels"));
        }
    }

    let mut by_image: HashMap<u64, Vec<OracleInstance>> = HashMap::new();
    for a in &dataset.annotations {
        let Some(&name) = categories.get(&a.category_id) else { continue };
        by_image.entry(a.image_id).or_default().push(OracleInstance {
            ann_id: a.id,
            category: name.to_string(),
            attributes: a.attributes.clone(),
            bbox: a.bbox,
            area: a.area,
        });
    }
    for e in expressions {
        let (img_id, ann_id) = (Some(e.image_id), Some(e.ann_id));
        let Some(img) = images.get(&e.image_id) else {
            report.push(ExpressionTarget, img_id, ann_id, format!("unknown image for `{}`", e.text));
            continue;
        };
        let instances = by_image.get(&e.image_id).map(Vec::as_slice).unwrap_or(&[]);
        if !instances.iter().any(|i| i.ann_id == e.ann_id) {
            report.push(ExpressionTarget, img_id, ann_id, format!("target not in image for `{}`", e.text));
            continue;
        }
        let matched = relation_oracle(&e.predicate, instances, img.width, img.height);
        if matched != BTreeSet::from([e.ann_id]) {
            report.push(ExpressionNotUnique, img_id, ann_id, format!("`{}` matches {matched:?}", e.text));
        }
    }
    report
}

/// Lists `images/` PNG files.
pub fn image_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir.join(IMAGES_DIR))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    out.sort();
    Ok(out)
}
