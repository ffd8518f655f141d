//! Segment library: manifest ingestion, score filtering, balanced sampling
//! and raster loading.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::Mask;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("zero valid records in {0}")]
    NoRecords(PathBuf),
    #[error("duplicate segment id `{id}` on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("no quality scores for segment `{0}`")]
    MissingScore(String),
    #[error("retain fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("quality scores for `{0}` are outside [0, 1]")]
    ScoreRange(String),
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("segment `{id}`: raster is {raster:?} but mask is {mask:?}")]
    DimensionMismatch {
        id: String,
        raster: (u32, u32),
        mask: (u32, u32),
    },
    #[error("segment `{id}`: manifest says area {declared} px, mask has {actual} px")]
    AreaMismatch { id: String, declared: u64, actual: u64 },
    #[error("unknown segment id `{0}`")]
    UnknownId(String),
    #[error("category index is empty")]
    EmptyIndex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentSource {
    Synthetic,
    Real,
}

/// One cut-out object as described by a manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub raster_path: PathBuf,
    pub mask_path: PathBuf,
    pub area_px: u64,
    pub source: SegmentSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub integrity: f64,
    pub is_object: f64,
    pub mask_quality: f64,
}

impl QualityScores {
    pub fn mean(&self) -> f64 {
        (self.integrity + self.is_object + self.mask_quality) / 3.0
    }

    fn in_range(&self) -> bool {
        [self.integrity, self.is_object, self.mask_quality]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CategoryPool {
    FrequentCategories,
    GeneralCategories,
    #[default]
    All,
    Custom(Vec<String>),
}

/// A manifest line that failed schema validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

/// Immutable index from category to segment ids.
///
/// Categories iterate in lexicographic order and ids within a category keep
/// manifest order, so sampling with a fixed seed is reproducible.
#[derive(Clone, Debug)]
pub struct CategoryIndex {
    categories: BTreeMap<String, Vec<String>>,
    records: Arc<HashMap<String, SegmentRecord>>,
    pool: CategoryPool,
}

impl CategoryIndex {
    pub fn from_records(records: Vec<SegmentRecord>) -> Result<Self, LibraryError> {
        let mut categories: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            if by_id.contains_key(&r.id) {
                return Err(LibraryError::DuplicateId { id: r.id, line: i + 1 });
            }
            categories.entry(r.category.clone()).or_default().push(r.id.clone());
            by_id.insert(r.id.clone(), r);
        }
        if by_id.is_empty() {
            return Err(LibraryError::EmptyIndex);
        }
        Ok(Self {
            categories,
            records: Arc::new(by_id),
            pool: CategoryPool::All,
        })
    }

    pub fn pool(&self) -> &CategoryPool {
        &self.pool
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_segments(&self) -> usize {
        self.categories.values().map(Vec::len).sum()
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn ids(&self, category: &str) -> &[String] {
        self.categories.get(category).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn get(&self, id: &str) -> Option<&SegmentRecord> {
        self.records.get(id)
    }

    /// Every indexed record, category-major.
    pub fn iter(&self) -> impl Iterator<Item = &SegmentRecord> {
        self.categories.values().flatten().map(|id| &self.records[id])
    }

    /// Restricts the index to `categories`, dropping categories not present.
    pub fn restrict(&self, pool: CategoryPool, categories: &[String]) -> Result<Self, LibraryError> {
        let keep: HashSet<&str> = categories.iter().map(String::as_str).collect();
        let categories: BTreeMap<_, _> = self
            .categories
            .iter()
            .filter(|(c, _)| keep.contains(c.as_str()))
            .map(|(c, ids)| (c.clone(), ids.clone()))
            .collect();
        if categories.is_empty() {
            return Err(LibraryError::EmptyIndex);
        }
        Ok(Self {
            categories,
            records: Arc::clone(&self.records),
            pool,
        })
    }

    /// Keeps only categories satisfying `pred`.
    pub fn retain_categories(&self, mut pred: impl FnMut(&str, &[String]) -> bool) -> Result<Self, LibraryError> {
        let categories: BTreeMap<_, _> = self
            .categories
            .iter()
            .filter(|(c, ids)| pred(c, ids))
            .map(|(c, ids)| (c.clone(), ids.clone()))
            .collect();
        if categories.is_empty() {
            return Err(LibraryError::EmptyIndex);
        }
        Ok(Self {
            categories,
            records: Arc::clone(&self.records),
            pool: self.pool.clone(),
        })
    }
}

/// Result of ingesting a manifest: the index plus any rejected lines.
#[derive(Debug)]
pub struct Ingested {
    pub index: CategoryIndex,
    pub rejected: Vec<RejectedLine>,
}

fn validate_record(r: &SegmentRecord) -> Result<(), String> {
    if r.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if r.category.trim().is_empty() {
        return Err("empty category".into());
    }
    if r.area_px == 0 {
        return Err("area_px must be at least 1".into());
    }
    Ok(())
}

/// Reads a line-delimited JSON manifest.
///
/// Relative raster and mask paths resolve against the manifest's directory.
/// Lines that fail the schema are skipped and reported; blank lines are
/// ignored.
pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Ingested, LibraryError> {
    let path = path.as_ref();
    let io_err = |source| LibraryError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: SegmentRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RejectedLine { line: line_no, reason: e.to_string() });
                continue;
            }
        };
        if let Err(reason) = validate_record(&rec) {
            rejected.push(RejectedLine { line: line_no, reason });
            continue;
        }
        if !seen.insert(rec.id.clone()) {
            return Err(LibraryError::DuplicateId { id: rec.id, line: line_no });
        }
        if rec.raster_path.is_relative() {
            rec.raster_path = base.join(&rec.raster_path);
        }
        if rec.mask_path.is_relative() {
            rec.mask_path = base.join(&rec.mask_path);
        }
        records.push(rec);
    }
    for r in &rejected {
        log::warn!("{}:{}: {}", path.display(), r.line, r.reason);
    }
    if records.is_empty() {
        return Err(LibraryError::NoRecords(path.to_path_buf()));
    }
    Ok(Ingested {
        index: CategoryIndex::from_records(records)?,
        rejected,
    })
}

#[derive(Deserialize)]
struct ScoreLine {
    id: String,
    #[serde(flatten)]
    scores: QualityScores,
}

/// Reads a line-delimited scores file (`{"id", "integrity", "is_object", "mask_quality"}`).
pub fn read_scores(path: impl AsRef<Path>) -> Result<HashMap<String, QualityScores>, LibraryError> {
    let path = path.as_ref();
    let io_err = |source| LibraryError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ScoreLine>(&line) {
            Ok(s) => {
                out.insert(s.id, s.scores);
            }
            Err(e) => log::warn!("{}:{}: {}", path.display(), i + 1, e),
        }
    }
    Ok(out)
}

/// Number of segments kept when retaining `fraction` of `n`.
pub fn retained_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n)
}

/// Keeps the globally top-scoring `retain_fraction` of segments.
///
/// Segments rank by the unweighted mean of their three quality scores,
/// descending, ties broken by ascending id. Categories left empty are
/// dropped.
pub fn filter_by_scores(
    index: &CategoryIndex,
    scores: &HashMap<String, QualityScores>,
    retain_fraction: f64,
) -> Result<CategoryIndex, LibraryError> {
    if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
        return Err(LibraryError::BadFraction(retain_fraction));
    }
    let mut ranked = Vec::with_capacity(index.num_segments());
    for rec in index.iter() {
        let s = scores
            .get(&rec.id)
            .ok_or_else(|| LibraryError::MissingScore(rec.id.clone()))?;
        if !s.in_range() {
            return Err(LibraryError::ScoreRange(rec.id.clone()));
        }
        ranked.push((s.mean(), rec.id.as_str()));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let keep: HashSet<&str> = ranked
        .iter()
        .take(retained_count(ranked.len(), retain_fraction))
        .map(|&(_, id)| id)
        .collect();

    let categories: BTreeMap<String, Vec<String>> = index
        .categories
        .iter()
        .filter_map(|(c, ids)| {
            let kept: Vec<String> = ids.iter().filter(|id| keep.contains(id.as_str())).cloned().collect();
            (!kept.is_empty()).then(|| (c.clone(), kept))
        })
        .collect();
    Ok(CategoryIndex {
        categories,
        records: Arc::clone(&index.records),
        pool: index.pool.clone(),
    })
}

/// Draws `k` segments: each draw picks a category uniformly, then a segment
/// of that category uniformly. Draws are independent, so repeats occur.
pub fn sample_segments<R: Rng + ?Sized>(
    index: &CategoryIndex,
    k: usize,
    rng: &mut R,
) -> Result<Vec<SegmentRecord>, LibraryError> {
    if index.categories.is_empty() {
        return Err(LibraryError::EmptyIndex);
    }
    let cats: Vec<&Vec<String>> = index.categories.values().collect();
    Ok((0..k)
        .map(|_| {
            let ids = cats[rng.random_range(0..cats.len())];
            let id = &ids[rng.random_range(0..ids.len())];
            index.records[id].clone()
        })
        .collect())
}

/// A decoded segment: RGB raster plus its binary mask.
#[derive(Clone, Debug)]
pub struct SegmentImage {
    pub rgb: RgbImage,
    pub mask: Mask,
}

/// Decodes a segment's raster and mask and checks them against the record.
///
/// Masks are read as 8-bit luma and thresholded at 128.
pub fn load_segment_raster(record: &SegmentRecord) -> Result<SegmentImage, LibraryError> {
    let decode = |path: &Path| {
        image::open(path).map_err(|source| LibraryError::Decode { path: path.to_path_buf(), source })
    };
    let rgb = decode(&record.raster_path)?.to_rgb8();
    let luma = decode(&record.mask_path)?.to_luma8();
    if rgb.dimensions() != luma.dimensions() {
        return Err(LibraryError::DimensionMismatch {
            id: record.id.clone(),
            raster: rgb.dimensions(),
            mask: luma.dimensions(),
        });
    }
    let bytes: Vec<u8> = luma.as_raw().iter().map(|&v| u8::from(v >= 128)).collect();
    let mask = Mask::from_bytes(luma.width(), luma.height(), &bytes);
    let actual = mask.count();
    if actual != record.area_px {
        return Err(LibraryError::AreaMismatch {
            id: record.id.clone(),
            declared: record.area_px,
            actual,
        });
    }
    Ok(SegmentImage { rgb, mask })
}

/// Thread-safe cache of decoded segments keyed by id.
#[derive(Default)]
pub struct SegmentStore {
    cache: RwLock<HashMap<String, Arc<SegmentImage>>>,
}

impl SegmentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&self, record: &SegmentRecord) -> Result<Arc<SegmentImage>, LibraryError> {
        if let Some(img) = self.cache.read().expect("segment cache poisoned").get(&record.id) {
            return Ok(Arc::clone(img));
        }
        let img = Arc::new(load_segment_raster(record)?);
        self.cache
            .write()
            .expect("segment cache poisoned")
            .entry(record.id.clone())
            .or_insert_with(|| Arc::clone(&img));
        Ok(img)
    }

    /// Inserts an in-memory segment, bypassing the filesystem.
    pub fn insert(&self, id: impl Into<String>, image: SegmentImage) {
        self.cache
            .write()
            .expect("segment cache poisoned")
            .insert(id.into(), Arc::new(image));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn rec(id: &str, cat: &str) -> SegmentRecord {
        SegmentRecord {
            id: id.into(),
            category: cat.into(),
            prompt: format!("a {cat}"),
            attributes: vec![],
            raster_path: "r.png".into(),
            mask_path: "m.png".into(),
            area_px: 1,
            source: SegmentSource::Synthetic,
        }
    }

    fn write_manifest(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_counts_categories() {
        let lines: Vec<String> = [rec("a", "apple"), rec("b", "apple"), rec("c", "cup")]
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let f = write_manifest(&lines);
        let ing = ingest_manifest(f.path()).unwrap();
        assert_eq!(ing.index.num_categories(), 2);
        assert_eq!(ing.index.num_segments(), 3);
        assert!(ing.rejected.is_empty());
    }

    #[test]
    fn ingest_empty_file_errors() {
        let f = write_manifest(&[]);
        let err = ingest_manifest(f.path()).unwrap_err();
        assert!(err.to_string().contains("zero valid records"), "{err}");
    }

    #[test]
    fn ingest_duplicate_names_id() {
        let lines: Vec<String> = [rec("dup", "apple"), rec("dup", "cup")]
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let f = write_manifest(&lines);
        let err = ingest_manifest(f.path()).unwrap_err();
        assert!(matches!(&err, LibraryError::DuplicateId { id, line: 2 } if id == "dup"));
        assert!(err.to_string().contains("dup"));
    }

    #[test]
    fn ingest_reports_bad_lines() {
        let mut lines = vec![serde_json::to_string(&rec("a", "apple")).unwrap()];
        lines.push("{not json".into());
        lines.push(serde_json::to_string(&rec("b", "")).unwrap());
        let f = write_manifest(&lines);
        let ing = ingest_manifest(f.path()).unwrap();
        assert_eq!(ing.index.num_segments(), 1);
        let bad: Vec<usize> = ing.rejected.iter().map(|r| r.line).collect();
        assert_eq!(bad, vec![2, 3]);
    }

    fn scored(means: &[(&str, f64)]) -> (CategoryIndex, HashMap<String, QualityScores>) {
        let idx = CategoryIndex::from_records(means.iter().map(|(id, _)| rec(id, "x")).collect()).unwrap();
        let scores = means
            .iter()
            .map(|&(id, m)| (id.to_string(), QualityScores { integrity: m, is_object: m, mask_quality: m }))
            .collect();
        (idx, scores)
    }

    #[test]
    fn filter_keeps_top_fraction() {
        let means: Vec<(String, f64)> = (0..10).map(|i| (format!("s{i}"), i as f64 / 10.0)).collect();
        let refs: Vec<(&str, f64)> = means.iter().map(|(s, m)| (s.as_str(), *m)).collect();
        let (idx, scores) = scored(&refs);
        let out = filter_by_scores(&idx, &scores, 0.3).unwrap();
        let mut kept: Vec<&str> = out.iter().map(|r| r.id.as_str()).collect();
        kept.sort();
        assert_eq!(kept, vec!["s7", "s8", "s9"]);
        let all = filter_by_scores(&idx, &scores, 1.0).unwrap();
        assert_eq!(all.num_segments(), 10);
    }

    #[test]
    fn filter_ties_prefer_smaller_id() {
        let (idx, scores) = scored(&[("b", 0.5), ("a", 0.5), ("c", 0.1), ("d", 0.9)]);
        let out = filter_by_scores(&idx, &scores, 0.5).unwrap();
        let mut kept: Vec<&str> = out.iter().map(|r| r.id.as_str()).collect();
        kept.sort();
        assert_eq!(kept, vec!["a", "d"]);
    }

    #[test]
    fn filter_missing_score_errors() {
        let (idx, mut scores) = scored(&[("a", 0.5), ("b", 0.2)]);
        scores.remove("b");
        assert!(matches!(filter_by_scores(&idx, &scores, 0.5), Err(LibraryError::MissingScore(id)) if id == "b"));
    }

    #[test]
    fn filter_drops_emptied_categories() {
        let idx = CategoryIndex::from_records(vec![rec("a", "apple"), rec("b", "cup")]).unwrap();
        let scores = HashMap::from([
            ("a".to_string(), QualityScores { integrity: 1.0, is_object: 1.0, mask_quality: 1.0 }),
            ("b".to_string(), QualityScores { integrity: 0.0, is_object: 0.0, mask_quality: 0.0 }),
        ]);
        let out = filter_by_scores(&idx, &scores, 0.5).unwrap();
        assert_eq!(out.categories().collect::<Vec<_>>(), vec!["apple"]);
    }

    #[test]
    fn single_category_sampling() {
        let idx = CategoryIndex::from_records(vec![rec("a", "apple"), rec("b", "apple")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_segments(&idx, 50, &mut rng).unwrap();
        assert!(s.iter().all(|r| r.category == "apple"));
    }

    #[test]
    fn sampling_is_seeded() {
        let idx = CategoryIndex::from_records((0..20).map(|i| rec(&format!("s{i}"), &format!("c{}", i % 4))).collect())
            .unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_segments(&idx, 30, &mut rng)
                .unwrap()
                .into_iter()
                .map(|r| r.id)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    fn save_pair(dir: &Path, raster: (u32, u32), mask: (u32, u32), fg: u32) -> (PathBuf, PathBuf) {
        let r = RgbImage::from_pixel(raster.0, raster.1, image::Rgb([200, 10, 10]));
        let mut m = image::GrayImage::new(mask.0, mask.1);
        for i in 0..fg {
            m.put_pixel(i % mask.0, i / mask.0, image::Luma([255]));
        }
        let rp = dir.join("r.png");
        let mp = dir.join("m.png");
        r.save(&rp).unwrap();
        m.save(&mp).unwrap();
        (rp, mp)
    }

    #[test]
    fn load_validates_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (rp, mp) = save_pair(dir.path(), (64, 64), (64, 64), 100);
        let mut r = rec("a", "apple");
        r.raster_path = rp;
        r.mask_path = mp;
        r.area_px = 100;
        let img = load_segment_raster(&r).unwrap();
        assert_eq!(img.mask.count(), 100);
        r.area_px = 99;
        assert!(matches!(load_segment_raster(&r), Err(LibraryError::AreaMismatch { actual: 100, .. })));
    }

    #[test]
    fn load_rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (rp, mp) = save_pair(dir.path(), (64, 64), (32, 32), 10);
        let mut r = rec("a", "apple");
        r.raster_path = rp;
        r.mask_path = mp;
        r.area_px = 10;
        assert!(matches!(load_segment_raster(&r), Err(LibraryError::DimensionMismatch { .. })));
    }
}
