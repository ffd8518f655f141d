//! Scene rasterization and occlusion resolution.
//!
//! Placement geometry: a segment of `w x h` pixels at scale `s` becomes
//! `max(1, round(w*s)) x max(1, round(h*s))`, its top-left corner sits at
//! `floor(cx - sw/2), floor(cy - sh/2)`, and scaled pixel `(u, v)` samples
//! source pixel `(floor((u + 0.5) * w / sw), floor((v + 0.5) * h / sh))`.
//! The mask is resampled nearest-neighbor with that map; the raster is
//! resampled bilinearly to the same size.

use std::collections::HashMap;
use std::path::PathBuf;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{LayoutSpec, Placement, SizeBin};
use crate::library::{LibraryError, SegmentRecord, SegmentSource, SegmentStore};
use crate::mask::{BBox, Mask, PlacedMask};

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error("placement of `{0}` has no foreground pixels on the canvas")]
    OffCanvas(String),
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("layout references unknown segment `{0}`")]
    MissingSegment(String),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("failed to load background {path}: {source}")]
    Background {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    SolidColor([u8; 3]),
    ExternalImage(PathBuf),
}

impl Default for Background {
    fn default() -> Self {
        Background::SolidColor([128, 128, 128])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Canvas {
    pub pixels: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32, background: &Background) -> Result<Self, CompositeError> {
        let pixels = match background {
            Background::SolidColor(c) => RgbImage::from_pixel(width, height, Rgb(*c)),
            Background::ExternalImage(path) => {
                let img = image::open(path)
                    .map_err(|source| CompositeError::Background { path: path.clone(), source })?
                    .to_rgb8();
                if img.dimensions() == (width, height) {
                    img
                } else {
                    imageops::resize(&img, width, height, FilterType::Triangle)
                }
            }
        };
        Ok(Self { pixels })
    }

    pub fn from_image(pixels: RgbImage) -> Self {
        Self { pixels }
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// Size of a `w x h` segment after scaling.
pub fn scaled_dims(w: u32, h: u32, scale: f64) -> (u32, u32) {
    let sw = ((w as f64 * scale).round() as u32).max(1);
    let sh = ((h as f64 * scale).round() as u32).max(1);
    (sw, sh)
}

/// Canvas position of the scaled segment's top-left pixel.
pub fn scaled_origin(sw: u32, sh: u32, center: (f64, f64)) -> (i64, i64) {
    (
        (center.0 - sw as f64 / 2.0).floor() as i64,
        (center.1 - sh as f64 / 2.0).floor() as i64,
    )
}

/// Clipped on-canvas window of a scaled segment.
#[derive(Clone, Copy, Debug)]
struct Footprint {
    sw: u32,
    sh: u32,
    left: i64,
    top: i64,
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

fn footprint(src_w: u32, src_h: u32, scale: f64, center: (f64, f64), canvas: (u32, u32)) -> Option<Footprint> {
    let (sw, sh) = scaled_dims(src_w, src_h, scale);
    let (left, top) = scaled_origin(sw, sh, center);
    let x0 = left.max(0);
    let y0 = top.max(0);
    let x1 = (left + sw as i64).min(canvas.0 as i64);
    let y1 = (top + sh as i64).min(canvas.1 as i64);
    (x0 < x1 && y0 < y1).then_some(Footprint {
        sw,
        sh,
        left,
        top,
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
    })
}

#[inline]
fn src_index(dst: u32, src_len: u32, dst_len: u32) -> u32 {
    let v = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as u32;
    v.min(src_len - 1)
}

/// Scales, translates and clips `mask` onto a canvas. Returns `None` when no
/// foreground pixel lands on the canvas.
pub fn place_mask(mask: &Mask, scale: f64, center: (f64, f64), canvas: (u32, u32)) -> Option<PlacedMask> {
    let fp = footprint(mask.width(), mask.height(), scale, center, canvas)?;
    let cols: Vec<u32> = (fp.x0..fp.x1)
        .map(|x| src_index((x as i64 - fp.left) as u32, mask.width(), fp.sw))
        .collect();
    let mut window = Mask::new(fp.x1 - fp.x0, fp.y1 - fp.y0);
    for y in fp.y0..fp.y1 {
        let sy = src_index((y as i64 - fp.top) as u32, mask.height(), fp.sh);
        let src = mask.row(sy);
        let dst = window.row_mut(y - fp.y0);
        for (d, &sx) in dst.iter_mut().zip(&cols) {
            *d = src[sx as usize];
        }
    }
    if window.is_empty() {
        return None;
    }
    Some(PlacedMask {
        canvas_w: canvas.0,
        canvas_h: canvas.1,
        origin: (fp.x0, fp.y0),
        window,
    })
}

/// Pastes one placed segment onto `canvas` and returns its mask at canvas
/// resolution. Only foreground pixels are written.
pub fn rasterize_placement(
    placement: &Placement,
    rgb: &RgbImage,
    mask: &Mask,
    canvas: &mut Canvas,
) -> Result<PlacedMask, CompositeError> {
    if !(placement.scale > 0.0 && placement.scale.is_finite()) {
        return Err(CompositeError::BadScale(placement.scale));
    }
    let dims = (canvas.width(), canvas.height());
    let center = (placement.center_x, placement.center_y);
    let placed = place_mask(mask, placement.scale, center, dims)
        .ok_or_else(|| CompositeError::OffCanvas(placement.segment_id.clone()))?;

    let (sw, sh) = scaled_dims(rgb.width(), rgb.height(), placement.scale);
    let scaled;
    let src = if (sw, sh) == rgb.dimensions() {
        rgb
    } else {
        scaled = imageops::resize(rgb, sw, sh, FilterType::Triangle);
        &scaled
    };
    let (left, top) = scaled_origin(sw, sh, center);
    let (ox, oy) = placed.origin;
    for wy in 0..placed.window.height() {
        let row = placed.window.row(wy);
        let cy = oy + wy;
        let sy = (cy as i64 - top) as u32;
        for (wx, &on) in row.iter().enumerate() {
            if on == 0 {
                continue;
            }
            let cx = ox + wx as u32;
            let sx = (cx as i64 - left) as u32;
            canvas.pixels.put_pixel(cx, cy, *src.get_pixel(sx, sy));
        }
    }
    Ok(placed)
}

/// One pasted instance, in paste order.
#[derive(Clone, Debug)]
pub struct StackEntry {
    pub segment_id: String,
    pub category: String,
    pub attributes: Vec<String>,
    pub prompt: String,
    pub source: SegmentSource,
    pub z: u32,
    pub target_bin: SizeBin,
    pub constraint_violated: bool,
    pub original: PlacedMask,
    pub original_bbox: BBox,
}

/// Pasted instances in strictly ascending z.
#[derive(Clone, Debug, Default)]
pub struct InstanceStack {
    entries: Vec<StackEntry>,
}

impl InstanceStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an instance; panics if `entry.z` does not exceed the current top.
    pub fn push(&mut self, entry: StackEntry) {
        if let Some(top) = self.entries.last() {
            assert!(entry.z > top.z, "stack z must be strictly ascending");
        }
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// An instance's original mask minus everything pasted above it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibleMask {
    pub mask: PlacedMask,
    pub visible_area_px: u64,
}

/// Subtracts from each instance the union of all higher-z originals.
///
/// Walks the stack top-down, keeping a canvas-wide "claimed" bitmap.
pub fn resolve_visible_masks(stack: &InstanceStack) -> Vec<VisibleMask> {
    let Some(first) = stack.entries.first() else {
        return Vec::new();
    };
    let (cw, ch) = (first.original.canvas_w, first.original.canvas_h);
    let mut claimed = vec![0u8; cw as usize * ch as usize];
    let mut out: Vec<VisibleMask> = Vec::with_capacity(stack.len());
    for entry in stack.entries.iter().rev() {
        let orig = &entry.original;
        let (ox, oy) = orig.origin;
        let mut window = Mask::new(orig.window.width(), orig.window.height());
        for wy in 0..orig.window.height() {
            let start = (oy + wy) as usize * cw as usize + ox as usize;
            let claimed_row = &mut claimed[start..start + orig.window.width() as usize];
            let src = orig.window.row(wy);
            let dst = window.row_mut(wy);
            for ((d, &s), c) in dst.iter_mut().zip(src).zip(claimed_row.iter_mut()) {
                *d = s & !*c & 1;
                *c |= s;
            }
        }
        let visible_area_px = window.count();
        out.push(VisibleMask {
            mask: PlacedMask { window, ..orig.clone() },
            visible_area_px,
        });
    }
    out.reverse();
    out
}

/// A composited scene: the naive paste, the surviving instances and their
/// visible masks (index-aligned with the stack).
#[derive(Clone, Debug)]
pub struct Scene {
    pub canvas: Canvas,
    pub stack: InstanceStack,
    pub visible: Vec<VisibleMask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanvasConfig {
    pub background: Background,
    /// Instances with fewer visible pixels than this are removed.
    pub min_visible_area: u64,
}

impl Default for CanvasConfig {
    fn default() -> Self {
        Self {
            background: Background::default(),
            min_visible_area: 1,
        }
    }
}

/// Pastes every placement in ascending z and resolves occlusion.
///
/// Instances whose visible area falls below `min_visible_area` are removed
/// from the returned stack.
pub fn composite_scene(
    layout: &LayoutSpec,
    segments: &[SegmentRecord],
    store: &SegmentStore,
    config: &CanvasConfig,
) -> Result<Scene, CompositeError> {
    let by_id: HashMap<&str, &SegmentRecord> = segments.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut canvas = Canvas::new(layout.canvas_w, layout.canvas_h, &config.background)?;
    let mut stack = InstanceStack::new();
    for p in &layout.placements {
        let rec = by_id
            .get(p.segment_id.as_str())
            .ok_or_else(|| CompositeError::MissingSegment(p.segment_id.clone()))?;
        let seg = store.load(rec)?;
        let original = rasterize_placement(p, &seg.rgb, &seg.mask, &mut canvas)?;
        let original_bbox = original.bbox().expect("placed mask is non-empty");
        stack.push(StackEntry {
            segment_id: rec.id.clone(),
            category: rec.category.clone(),
            attributes: rec.attributes.clone(),
            prompt: rec.prompt.clone(),
            source: rec.source,
            z: p.z,
            target_bin: p.target_bin,
            constraint_violated: p.constraint_violated,
            original,
            original_bbox,
        });
    }
    let visible = resolve_visible_masks(&stack);
    let min_area = config.min_visible_area.max(1);
    let (entries, visible): (Vec<_>, Vec<_>) = stack
        .entries
        .into_iter()
        .zip(visible)
        .filter(|(_, v)| v.visible_area_px >= min_area)
        .unzip();
    Ok(Scene {
        canvas,
        stack: InstanceStack { entries },
        visible,
    })
}
