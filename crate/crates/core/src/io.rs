//! PNG encoding and atomic file writes.

use std::fs;
use std::io::{self, Cursor, Write};
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, GrayImage, ImageEncoder, RgbImage};

use crate::mask::Mask;

fn encode(bytes: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub)
        .write_image(bytes, w, h, color)
        .expect("in-memory png encoding");
    out.into_inner()
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    encode(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

/// Single-channel PNG, foreground 255.
pub fn encode_png_mask(mask: &Mask) -> Vec<u8> {
    let gray = GrayImage::from_raw(
        mask.width(),
        mask.height(),
        mask.as_bytes().iter().map(|&b| b * 255).collect(),
    )
    .expect("mask buffer size");
    encode(gray.as_raw(), gray.width(), gray.height(), ExtendedColorType::L8)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(&tmp, path)
}
