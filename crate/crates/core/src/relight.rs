//! Relighting backends.
//!
//! The relighting model itself is external. [`StubRelight`] is a seeded,
//! offline stand-in; [`HttpRelight`] posts the composite, its foreground
//! mask and a background prompt to a service and expects a PNG back.

use std::time::Duration;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::multipart::{Form, Part};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{encode_png_mask, encode_png_rgb};
use crate::mask::Mask;

#[derive(Debug, Error)]
pub enum RelightError {
    #[error("relight endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("relight request timed out after {0:?}")]
    Timeout(Duration),
    #[error("relight backend returned status {0}")]
    Status(u16),
    #[error("relight response is not a decodable image: {0}")]
    Decode(String),
    #[error("relight response is {got:?}, expected {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("relight config: {0}")]
    Config(String),
}

#[derive(Clone, Debug)]
pub struct RelightRequest {
    pub composite: RgbImage,
    /// Union of all instance masks, at canvas resolution.
    pub foreground: Mask,
    pub prompt: String,
    /// Per-image seed; only seeded backends use it.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelightResponse {
    pub relit: RgbImage,
}

pub trait RelightBackend: Send + Sync {
    fn relight(&self, request: &RelightRequest) -> Result<RelightResponse, RelightError>;
}

fn check_dims(request: &RelightRequest, relit: &RgbImage) -> Result<(), RelightError> {
    let expected = request.composite.dimensions();
    if relit.dimensions() != expected {
        return Err(RelightError::DimensionMismatch { expected, got: relit.dimensions() });
    }
    Ok(())
}

/// Deterministic relighting stand-in: a per-channel affine color change
/// drawn from the request seed, plus a two-color vertical gradient
/// replacing everything outside the foreground.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubRelight {
    identity: bool,
}

impl StubRelight {
    pub fn new() -> Self {
        Self { identity: false }
    }

    /// Returns the composite unchanged.
    pub fn identity() -> Self {
        Self { identity: true }
    }
}

impl RelightBackend for StubRelight {
    fn relight(&self, request: &RelightRequest) -> Result<RelightResponse, RelightError> {
        let mut relit = request.composite.clone();
        if self.identity {
            return Ok(RelightResponse { relit });
        }
        let (w, h) = relit.dimensions();
        if request.foreground.width() != w || request.foreground.height() != h {
            return Err(RelightError::DimensionMismatch {
                expected: (w, h),
                got: (request.foreground.width(), request.foreground.height()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let gain: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.8..1.2));
        let bias: [f32; 3] = std::array::from_fn(|_| rng.random_range(-20.0..20.0));
        let top: [f32; 3] = std::array::from_fn(|_| rng.random_range(40.0..220.0));
        let bottom: [f32; 3] = std::array::from_fn(|_| rng.random_range(40.0..220.0));
        for y in 0..h {
            let t = if h > 1 { y as f32 / (h - 1) as f32 } else { 0.0 };
            let bg = Rgb(std::array::from_fn(|c| (top[c] + (bottom[c] - top[c]) * t).round() as u8));
            let fg_row = request.foreground.row(y);
            for (x, &fg) in fg_row.iter().enumerate() {
                let px = relit.get_pixel_mut(x as u32, y);
                if fg == 0 {
                    *px = bg;
                } else {
                    for c in 0..3 {
                        px.0[c] = (px.0[c] as f32 * gain[c] + bias[c]).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
        Ok(RelightResponse { relit })
    }
}

/// Posts `composite` (PNG), `mask` (PNG) and `prompt` (UTF-8) as multipart
/// form fields; the response body must be a PNG of the same size.
pub struct HttpRelight {
    endpoint: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl HttpRelight {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, RelightError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RelightError::Config(e.to_string()))?;
        Ok(Self { endpoint: endpoint.into(), timeout, client })
    }

    fn map_err(&self, e: reqwest::Error) -> RelightError {
        if e.is_timeout() {
            RelightError::Timeout(self.timeout)
        } else {
            RelightError::Unreachable(e.to_string())
        }
    }
}

impl RelightBackend for HttpRelight {
    fn relight(&self, request: &RelightRequest) -> Result<RelightResponse, RelightError> {
        let png = |bytes: Vec<u8>, name: &'static str| {
            Part::bytes(bytes).file_name(name).mime_str("image/png").expect("static mime")
        };
        let form = Form::new()
            .part("composite", png(encode_png_rgb(&request.composite), "composite.png"))
            .part("mask", png(encode_png_mask(&request.foreground), "mask.png"))
            .text("prompt", request.prompt.clone());
        let resp = self
            .client
            .post(&self.endpoint)
            .multipart(form)
            .send()
            .map_err(|e| self.map_err(e))?;
        if !resp.status().is_success() {
            return Err(RelightError::Status(resp.status().as_u16()));
        }
        let body = resp.bytes().map_err(|e| self.map_err(e))?;
        let relit = image::load_from_memory(&body)
            .map_err(|e| RelightError::Decode(e.to_string()))?
            .to_rgb8();
        check_dims(request, &relit)?;
        Ok(RelightResponse { relit })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelightBackendKind {
    #[default]
    Stub,
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelightConfig {
    pub backend: RelightBackendKind,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    /// Background description sent with every request.
    pub prompt: String,
    /// Stub only: skip the color change and background synthesis.
    pub identity: bool,
}

impl Default for RelightConfig {
    fn default() -> Self {
        Self {
            backend: RelightBackendKind::Stub,
            endpoint: None,
            timeout_secs: 120,
            prompt: "a natural everyday scene with soft daylight".into(),
            identity: false,
        }
    }
}

impl RelightConfig {
    pub fn build(&self) -> Result<Box<dyn RelightBackend>, RelightError> {
        match self.backend {
            RelightBackendKind::Stub if self.identity => Ok(Box::new(StubRelight::identity())),
            RelightBackendKind::Stub => Ok(Box::new(StubRelight::new())),
            RelightBackendKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| RelightError::Config("http backend needs an endpoint".into()))?;
                Ok(Box::new(HttpRelight::new(endpoint, Duration::from_secs(self.timeout_secs))?))
            }
        }
    }
}
