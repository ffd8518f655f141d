//! Scene layout sampling: object counts, size bins, scales, centers and
//! z-order, with rejection sampling against an occlusion bound.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compositor::{place_mask, scaled_dims};
use crate::mask::{Mask, PlacedMask};

/// Upper edge (exclusive) of the small bin, in pixels.
pub const SMALL_MAX_AREA: u64 = 32 * 32;
/// Upper edge (exclusive) of the medium bin, in pixels.
pub const MEDIUM_MAX_AREA: u64 = 96 * 96;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("invalid layout config: {0}")]
    Config(String),
    #[error("count histogram has support outside [{min}, {max}]: {value}")]
    HistogramSupport { min: u32, max: u32, value: u32 },
    #[error("{bin:?} bin is infeasible on a {w}x{h} canvas")]
    InfeasibleBin { bin: SizeBin, w: u32, h: u32 },
    #[error("segment area must be at least 1 pixel")]
    ZeroArea,
    #[error("got {got} segments, expected between {min} and {max}")]
    SegmentCount { got: usize, min: u32, max: u32 },
    #[error("the coco-prior strategy needs a real annotation file")]
    MissingPrior,
    #[error("segment `{0}` could not be placed with any foreground on the canvas")]
    Unplaceable(String),
    #[error("cannot read annotation file: {0}")]
    PriorIo(#[from] std::io::Error),
    #[error("malformed annotation file: {0}")]
    PriorFormat(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBin {
    Small,
    Medium,
    Large,
}

impl SizeBin {
    pub const ALL: [SizeBin; 3] = [SizeBin::Small, SizeBin::Medium, SizeBin::Large];

    pub fn of_area(area: u64) -> SizeBin {
        if area < SMALL_MAX_AREA {
            SizeBin::Small
        } else if area < MEDIUM_MAX_AREA {
            SizeBin::Medium
        } else {
            SizeBin::Large
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Half-open target-area range on a canvas of `canvas_area` pixels.
    /// Large is capped at a quarter of the canvas; every range is capped at
    /// the canvas area. `None` when the range is empty.
    pub fn area_range(self, canvas_area: u64) -> Option<(u64, u64)> {
        let (lo, hi) = match self {
            SizeBin::Small => (1, SMALL_MAX_AREA.min(canvas_area + 1)),
            SizeBin::Medium => (SMALL_MAX_AREA, MEDIUM_MAX_AREA.min(canvas_area + 1)),
            SizeBin::Large => (MEDIUM_MAX_AREA, canvas_area / 4 + 1),
        };
        (lo < hi).then_some((lo, hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutStrategy {
    /// Original segment scale, uniform centers, no size control.
    Random,
    /// Centers and areas drawn from boxes of a real annotation file.
    CocoPrior,
    /// Size-bin control, uniform centers, occlusion-bounded rejection.
    #[default]
    Ours,
}

/// Distribution of per-image object counts over `[count_min, count_max]`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountDistribution {
    #[default]
    Uniform,
    /// Unnormalized weights per count.
    Histogram(BTreeMap<u32, f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub count_min: u32,
    pub count_max: u32,
    pub count_distribution: CountDistribution,
    /// Small, medium, large.
    pub bin_proportions: [f64; 3],
    /// Largest fraction of an instance's pixels that later instances may hide.
    pub max_occlusion: f64,
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub strategy: LayoutStrategy,
    pub max_rejection_attempts: u32,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            count_min: 5,
            count_max: 20,
            count_distribution: CountDistribution::Uniform,
            bin_proportions: [0.40, 0.35, 0.25],
            max_occlusion: 0.70,
            canvas_w: 512,
            canvas_h: 512,
            strategy: LayoutStrategy::Ours,
            max_rejection_attempts: 100,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: &str| Err(LayoutError::Config(m.to_string()));
        if !(1 <= self.count_min && self.count_min <= self.count_max) {
            return bad("need 1 <= count_min <= count_max");
        }
        if self.bin_proportions.iter().any(|p| p.is_nan() || *p < 0.0) {
            return bad("bin proportions must be non-negative");
        }
        if (self.bin_proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("bin proportions must sum to 1");
        }
        if !(0.0..1.0).contains(&self.max_occlusion) {
            return bad("max_occlusion must be in [0, 1)");
        }
        if self.count_max >= u32::from(u16::MAX) {
            return bad("count_max too large");
        }
        if self.canvas_w == 0 || self.canvas_h == 0 {
            return bad("canvas must be non-empty");
        }
        if let CountDistribution::Histogram(h) = &self.count_distribution {
            self.check_histogram(h)?;
        }
        Ok(())
    }

    fn check_histogram(&self, h: &BTreeMap<u32, f64>) -> Result<(), LayoutError> {
        if let Some((&value, _)) = h
            .iter()
            .find(|(&k, &w)| w > 0.0 && !(self.count_min..=self.count_max).contains(&k))
        {
            return Err(LayoutError::HistogramSupport { min: self.count_min, max: self.count_max, value });
        }
        if h.values().any(|w| w.is_nan() || *w < 0.0) || !h.values().any(|w| *w > 0.0) {
            return Err(LayoutError::Config("count histogram needs positive weight".into()));
        }
        Ok(())
    }

    pub fn canvas_area(&self) -> u64 {
        u64::from(self.canvas_w) * u64::from(self.canvas_h)
    }
}

pub fn sample_object_count<R: Rng + ?Sized>(config: &LayoutConfig, rng: &mut R) -> Result<u32, LayoutError> {
    match &config.count_distribution {
        CountDistribution::Uniform => {
            if config.count_min > config.count_max || config.count_min == 0 {
                return Err(LayoutError::Config("need 1 <= count_min <= count_max".into()));
            }
            Ok(rng.random_range(config.count_min..=config.count_max))
        }
        CountDistribution::Histogram(h) => {
            config.check_histogram(h)?;
            let (values, weights): (Vec<u32>, Vec<f64>) = h.iter().map(|(&k, &w)| (k, w)).unzip();
            let dist = WeightedIndex::new(&weights).map_err(|e| LayoutError::Config(e.to_string()))?;
            Ok(values[dist.sample(rng)])
        }
    }
}

/// Independent categorical draws with the configured proportions, then shuffled.
pub fn assign_size_bins<R: Rng + ?Sized>(count: usize, config: &LayoutConfig, rng: &mut R) -> Vec<SizeBin> {
    let dist = WeightedIndex::new(config.bin_proportions).expect("validated bin proportions");
    let mut bins: Vec<SizeBin> = (0..count).map(|_| SizeBin::ALL[dist.sample(rng)]).collect();
    bins.shuffle(rng);
    bins
}

/// Scale placing `segment_area_px * s^2` at fraction `u` of the bin's range.
pub fn scale_for_bin_at(segment_area_px: u64, bin: SizeBin, canvas: (u32, u32), u: f64) -> Result<f64, LayoutError> {
    if segment_area_px == 0 {
        return Err(LayoutError::ZeroArea);
    }
    let canvas_area = u64::from(canvas.0) * u64::from(canvas.1);
    let (lo, hi) = bin.area_range(canvas_area).ok_or(LayoutError::InfeasibleBin { bin, w: canvas.0, h: canvas.1 })?;
    // Keep the target at least one pixel below `hi` so rounding stays in bin.
    let target = (lo as f64 + u.clamp(0.0, 1.0) * (hi - lo) as f64).clamp(lo as f64, (hi - 1) as f64);
    Ok((target / segment_area_px as f64).sqrt())
}

/// Scale whose scaled area lands uniformly inside `bin`.
pub fn scale_for_bin<R: Rng + ?Sized>(
    segment_area_px: u64,
    bin: SizeBin,
    canvas: (u32, u32),
    rng: &mut R,
) -> Result<f64, LayoutError> {
    let u: f64 = rng.random();
    scale_for_bin_at(segment_area_px, bin, canvas, u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub segment_id: String,
    pub center_x: f64,
    pub center_y: f64,
    pub scale: f64,
    pub target_bin: SizeBin,
    /// Paste order; higher is on top.
    pub z: u32,
    /// Set when the rejection budget ran out before the occlusion bound held.
    #[serde(default)]
    pub constraint_violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub placements: Vec<Placement>,
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub seed: Option<u64>,
}

/// What the layout sampler needs to know about a segment.
#[derive(Clone, Copy, Debug)]
pub struct LayoutInput<'a> {
    pub id: &'a str,
    pub mask: &'a Mask,
}

/// Boxes from a real annotation file, normalized by image size.
#[derive(Clone, Debug, Default)]
pub struct CocoPrior {
    boxes: Vec<PriorBox>,
    counts: BTreeMap<u32, u64>,
}

#[derive(Clone, Copy, Debug)]
struct PriorBox {
    cx: f64,
    cy: f64,
    area: f64,
}

#[derive(Deserialize)]
struct PriorFile {
    images: Vec<PriorImage>,
    annotations: Vec<PriorAnn>,
}

#[derive(Deserialize)]
struct PriorImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
struct PriorAnn {
    image_id: u64,
    bbox: [f64; 4],
    area: f64,
}

impl CocoPrior {
    /// Reads `images[].{id,width,height}` and `annotations[].{image_id,bbox,area}`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LayoutError> {
        let file: PriorFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let sizes: BTreeMap<u64, (f64, f64)> = file.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
        let mut per_image: BTreeMap<u64, u32> = file.images.iter().map(|i| (i.id, 0)).collect();
        let mut boxes = Vec::with_capacity(file.annotations.len());
        for a in &file.annotations {
            let Some(&(w, h)) = sizes.get(&a.image_id) else { continue };
            if w <= 0.0 || h <= 0.0 || a.area <= 0.0 {
                continue;
            }
            *per_image.entry(a.image_id).or_default() += 1;
            boxes.push(PriorBox {
                cx: (a.bbox[0] + a.bbox[2] / 2.0) / w,
                cy: (a.bbox[1] + a.bbox[3] / 2.0) / h,
                area: a.area / (w * h),
            });
        }
        let mut counts = BTreeMap::new();
        for n in per_image.into_values() {
            *counts.entry(n).or_insert(0) += 1;
        }
        Ok(Self { boxes, counts })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Per-image object-count histogram restricted to `[min, max]`, usable
    /// as [`CountDistribution::Histogram`].
    pub fn count_histogram(&self, min: u32, max: u32) -> BTreeMap<u32, f64> {
        self.counts
            .range(min..=max)
            .map(|(&k, &v)| (k, v as f64))
            .collect()
    }
}

/// Per-pixel topmost-owner map used to track occluded fractions while
/// placements are accepted one at a time.
struct OcclusionTracker {
    width: u32,
    owner: Vec<u16>,
    area: Vec<u64>,
    hidden: Vec<u64>,
    hits: Vec<u64>,
}

const NO_OWNER: u16 = u16::MAX;

impl OcclusionTracker {
    fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            owner: vec![NO_OWNER; width as usize * height as usize],
            area: Vec::new(),
            hidden: Vec::new(),
            hits: Vec::new(),
        }
    }

    fn for_each_pixel(m: &PlacedMask, width: u32, mut f: impl FnMut(usize)) {
        let (ox, oy) = m.origin;
        for wy in 0..m.window.height() {
            let base = (oy + wy) as usize * width as usize + ox as usize;
            for (wx, &on) in m.window.row(wy).iter().enumerate() {
                if on != 0 {
                    f(base + wx);
                }
            }
        }
    }

    /// Whether pasting `m` on top keeps every accepted instance within `bound`.
    fn admits(&mut self, m: &PlacedMask, bound: f64) -> bool {
        self.hits.clear();
        self.hits.resize(self.area.len(), 0);
        let owner = &self.owner;
        let hits = &mut self.hits;
        Self::for_each_pixel(m, self.width, |i| {
            let o = owner[i];
            if o != NO_OWNER {
                hits[o as usize] += 1;
            }
        });
        self.hits
            .iter()
            .enumerate()
            .all(|(j, &h)| h == 0 || (self.hidden[j] + h) as f64 <= bound * self.area[j] as f64)
    }

    fn accept(&mut self, m: &PlacedMask) {
        let id = self.area.len() as u16;
        self.hits.clear();
        self.hits.resize(self.area.len(), 0);
        let owner = &mut self.owner;
        let hits = &mut self.hits;
        Self::for_each_pixel(m, self.width, |i| {
            let o = owner[i];
            if o != NO_OWNER {
                hits[o as usize] += 1;
            }
            owner[i] = id;
        });
        for (h, add) in self.hidden.iter_mut().zip(&self.hits) {
            *h += add;
        }
        self.area.push(m.count());
        self.hidden.push(0);
    }
}

/// Samples a layout for `segments`, which are placed in the given order
/// (that order becomes z).
///
/// `Ours` resamples a placement's center whenever pasting it would leave an
/// earlier instance with more than `max_occlusion` of its on-canvas pixels
/// hidden; after `max_rejection_attempts` the last candidate is kept and
/// flagged. Centers are uniform over the canvas, so at least a quarter of
/// each scaled raster is always on-canvas.
pub fn build_layout<R: Rng + ?Sized>(
    segments: &[LayoutInput<'_>],
    config: &LayoutConfig,
    prior: Option<&CocoPrior>,
    rng: &mut R,
) -> Result<LayoutSpec, LayoutError> {
    config.validate()?;
    let n = segments.len();
    if !(config.count_min as usize..=config.count_max as usize).contains(&n) {
        return Err(LayoutError::SegmentCount { got: n, min: config.count_min, max: config.count_max });
    }
    let canvas = (config.canvas_w, config.canvas_h);
    let (w, h) = (canvas.0 as f64, canvas.1 as f64);
    let mut placements = Vec::with_capacity(n);

    match config.strategy {
        LayoutStrategy::Random => {
            for (z, seg) in segments.iter().enumerate() {
                let (cx, cy) = (rng.random::<f64>() * w, rng.random::<f64>() * h);
                placements.push(Placement {
                    segment_id: seg.id.to_string(),
                    center_x: cx,
                    center_y: cy,
                    scale: 1.0,
                    target_bin: SizeBin::of_area(seg.mask.count()),
                    z: z as u32,
                    constraint_violated: false,
                });
            }
        }
        LayoutStrategy::CocoPrior => {
            let prior = prior.filter(|p| !p.is_empty()).ok_or(LayoutError::MissingPrior)?;
            for (z, seg) in segments.iter().enumerate() {
                let area = seg.mask.count();
                if area == 0 {
                    return Err(LayoutError::ZeroArea);
                }
                let b = prior.boxes[rng.random_range(0..prior.boxes.len())];
                let target = (b.area * w * h).max(1.0);
                placements.push(Placement {
                    segment_id: seg.id.to_string(),
                    center_x: b.cx * w,
                    center_y: b.cy * h,
                    scale: (target / area as f64).sqrt(),
                    target_bin: SizeBin::of_area(target.round() as u64),
                    z: z as u32,
                    constraint_violated: false,
                });
            }
        }
        LayoutStrategy::Ours => {
            let bins = assign_size_bins(n, config, rng);
            let mut tracker = OcclusionTracker::new(canvas.0, canvas.1);
            for (z, (seg, bin)) in segments.iter().zip(bins).enumerate() {
                let scale = nonempty_scale(seg.mask, scale_for_bin(seg.mask.count(), bin, canvas, rng)?);
                let mut chosen: Option<(f64, f64, PlacedMask)> = None;
                let mut violated = true;
                for _ in 0..config.max_rejection_attempts.max(1) {
                    let (cx, cy) = (rng.random::<f64>() * w, rng.random::<f64>() * h);
                    let Some(placed) = place_mask(seg.mask, scale, (cx, cy), canvas) else { continue };
                    if tracker.admits(&placed, config.max_occlusion) {
                        chosen = Some((cx, cy, placed));
                        violated = false;
                        break;
                    }
                    chosen = Some((cx, cy, placed));
                }
                let (cx, cy, placed) = match chosen {
                    Some(c) => c,
                    None => {
                        let c = fallback_center(seg, scale, canvas)?;
                        violated = !tracker.admits(&c.2, config.max_occlusion);
                        c
                    }
                };
                if violated {
                    log::warn!("occlusion bound not met for `{}` after {} attempts", seg.id, config.max_rejection_attempts);
                }
                tracker.accept(&placed);
                placements.push(Placement {
                    segment_id: seg.id.to_string(),
                    center_x: cx,
                    center_y: cy,
                    scale,
                    target_bin: bin,
                    z: z as u32,
                    constraint_violated: violated,
                });
            }
        }
    }
    Ok(LayoutSpec { placements, canvas_w: canvas.0, canvas_h: canvas.1, seed: None })
}

/// Grows `scale` until nearest-neighbour resampling keeps at least one
/// foreground pixel. Only matters for targets of a few pixels, where a
/// sparse shape can otherwise vanish entirely.
fn nonempty_scale(mask: &Mask, mut scale: f64) -> f64 {
    for _ in 0..64 {
        let (sw, sh) = scaled_dims(mask.width(), mask.height(), scale);
        let center = (sw as f64 / 2.0, sh as f64 / 2.0);
        if place_mask(mask, scale, center, (sw, sh)).is_some() {
            break;
        }
        scale *= 1.1;
    }
    scale
}

/// Centers the segment's foreground box on the canvas.
fn fallback_center(seg: &LayoutInput<'_>, scale: f64, canvas: (u32, u32)) -> Result<(f64, f64, PlacedMask), LayoutError> {
    let unplaceable = || LayoutError::Unplaceable(seg.id.to_string());
    let fg = seg.mask.bbox().ok_or_else(unplaceable)?;
    let (fx, fy) = fg.center();
    let (mx, my) = (seg.mask.width() as f64 / 2.0, seg.mask.height() as f64 / 2.0);
    let cx = canvas.0 as f64 / 2.0 - (fx - mx) * scale;
    let cy = canvas.1 as f64 / 2.0 - (fy - my) * scale;
    let placed = place_mask(seg.mask, scale, (cx, cy), canvas).ok_or_else(unplaceable)?;
    Ok((cx, cy, placed))
}
