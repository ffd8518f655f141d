//! Mask-area-weighted relight blending in CIELAB.
//!
//! Each surviving instance gets a weight `alpha` from its visible area
//! relative to the smallest and largest instance in the image; smaller
//! instances keep more of their original lightness. Chroma moves only a
//! fixed small fraction `beta` toward the relit image. Pixels owned by no
//! instance are copied from the relit image unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{lab_to_srgb, srgb_to_lab, LabPixel};
use crate::compositor::{Canvas, VisibleMask};

#[derive(Debug, Error, PartialEq)]
pub enum BlendError {
    #[error("area {area} outside [{min}, {max}]")]
    AreaOutOfRange { area: u64, min: u64, max: u64 },
    #[error("naive canvas is {naive:?} but relit canvas is {relit:?}")]
    DimensionMismatch { naive: (u32, u32), relit: (u32, u32) },
    #[error("invalid blend params: {0}")]
    Params(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendParams {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Sigmoid steepness.
    pub s: f64,
    /// Chroma factor toward the relit image.
    pub beta: f64,
}

impl Default for BlendParams {
    fn default() -> Self {
        Self {
            alpha_min: 0.20,
            alpha_max: 0.80,
            s: 10.0,
            beta: 0.10,
        }
    }
}

impl BlendParams {
    pub fn validate(&self) -> Result<(), BlendError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.alpha_min) || !unit.contains(&self.alpha_max) || self.alpha_min > self.alpha_max {
            return Err(BlendError::Params("need 0 <= alpha_min <= alpha_max <= 1".into()));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(BlendError::Params("steepness must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(BlendError::Params("beta must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `alpha = alpha_min + (alpha_max - alpha_min) * sigmoid(s * (1/2 - r))`
/// with `r = (area - area_min) / (area_max - area_min)`, and `r = 1/2` when
/// all areas are equal. Decreasing in `area`.
pub fn compute_blend_weight(area_px: u64, area_min: u64, area_max: u64, params: &BlendParams) -> Result<f64, BlendError> {
    if area_px < area_min || area_px > area_max {
        return Err(BlendError::AreaOutOfRange { area: area_px, min: area_min, max: area_max });
    }
    let r = if area_min == area_max {
        0.5
    } else {
        (area_px - area_min) as f64 / (area_max - area_min) as f64
    };
    Ok(params.alpha_min + (params.alpha_max - params.alpha_min) * sigmoid(params.s * (0.5 - r)))
}

/// Lightness moves toward the original by `alpha`; chroma toward the relit by `beta`.
pub fn blend_pixel(orig: LabPixel, relit: LabPixel, alpha: f64, beta: f64) -> LabPixel {
    LabPixel {
        l: alpha * orig.l + (1.0 - alpha) * relit.l,
        a: (1.0 - beta) * orig.a + beta * relit.a,
        b: (1.0 - beta) * orig.b + beta * relit.b,
    }
}

/// Per-instance weights for an image, index-aligned with `visible`.
pub fn instance_weights(visible: &[VisibleMask], params: &BlendParams) -> Vec<f64> {
    let Some(min) = visible.iter().map(|v| v.visible_area_px).min() else {
        return Vec::new();
    };
    let max = visible.iter().map(|v| v.visible_area_px).max().unwrap_or(min);
    visible
        .iter()
        .map(|v| compute_blend_weight(v.visible_area_px, min, max, params).expect("area within image range"))
        .collect()
}

/// Blends the naive composite into the relit image under each visible mask.
pub fn blend_composite(
    naive: &Canvas,
    relit: &Canvas,
    visible: &[VisibleMask],
    params: &BlendParams,
) -> Result<Canvas, BlendError> {
    params.validate()?;
    let (w, h) = naive.pixels.dimensions();
    if relit.pixels.dimensions() != (w, h) {
        return Err(BlendError::DimensionMismatch {
            naive: (w, h),
            relit: relit.pixels.dimensions(),
        });
    }
    const NONE: u16 = u16::MAX;
    let mut owner = vec![NONE; w as usize * h as usize];
    for (i, v) in visible.iter().enumerate() {
        let (ox, oy) = v.mask.origin;
        for wy in 0..v.mask.window.height() {
            let base = (oy + wy) as usize * w as usize + ox as usize;
            for (wx, &on) in v.mask.window.row(wy).iter().enumerate() {
                if on != 0 {
                    owner[base + wx] = i as u16;
                }
            }
        }
    }
    let alphas = instance_weights(visible, params);
    let mut out = relit.pixels.clone();
    let row_len = w as usize * 3;
    out.par_chunks_mut(row_len)
        .zip(naive.pixels.par_chunks(row_len))
        .zip(owner.par_chunks(w as usize))
        .for_each(|((dst, src), owners)| {
            for (x, &o) in owners.iter().enumerate() {
                if o == NONE {
                    continue;
                }
                let px = &mut dst[x * 3..x * 3 + 3];
                let orig = srgb_to_lab([src[x * 3], src[x * 3 + 1], src[x * 3 + 2]]);
                let rel = srgb_to_lab([px[0], px[1], px[2]]);
                px.copy_from_slice(&lab_to_srgb(blend_pixel(orig, rel, alphas[o as usize], params.beta)));
            }
        });
    Ok(Canvas::from_image(out))
}
