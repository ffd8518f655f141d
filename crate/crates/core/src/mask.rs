//! Binary masks.
//!
//! Masks are stored row-major, one byte per pixel holding 0 or 1. Two kinds
//! are used across the crate: a full-frame [`Mask`], and a [`PlacedMask`]
//! which is a window of a canvas-sized mask (everything outside the window
//! is background).

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    /// Builds a mask from row-major bytes; any non-zero byte is foreground.
    pub fn from_bytes(width: u32, height: u32, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width as usize * height as usize, "mask length must equal w*h");
        Self {
            width,
            height,
            data: bytes.iter().map(|&b| u8::from(b != 0)).collect(),
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = u8::from(on);
    }

    /// Row-major 0/1 bytes.
    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> u64 {
        self.data.iter().map(|&b| u64::from(b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let w = self.width as usize;
        &self.data[y as usize * w..(y as usize + 1) * w]
    }

    pub fn row_mut(&mut self, y: u32) -> &mut [u8] {
        let w = self.width as usize;
        &mut self.data[y as usize * w..(y as usize + 1) * w]
    }

    /// Tight bounding box of the foreground as `(x, y, w, h)`, or `None` when empty.
    pub fn bbox(&self) -> Option<BBox> {
        let mut min_x = u32::MAX;
        let mut min_y = u32::MAX;
        let mut max_x = 0;
        let mut max_y = 0;
        for y in 0..self.height {
            let row = self.row(y);
            if let Some(first) = row.iter().position(|&b| b != 0) {
                let last = row.iter().rposition(|&b| b != 0).unwrap_or(first);
                min_x = min_x.min(first as u32);
                max_x = max_x.max(last as u32);
                min_y = min_y.min(y);
                max_y = y;
            }
        }
        (min_x != u32::MAX).then(|| BBox {
            x: min_x,
            y: min_y,
            w: max_x - min_x + 1,
            h: max_y - min_y + 1,
        })
    }
}

/// Axis-aligned box in pixel units, top-left origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        Self { x: v[0], y: v[1], w: v[2], h: v[3] }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// A canvas-resolution mask stored as its on-canvas window.
///
/// `origin` is the canvas position of `window`'s top-left pixel. Pixels of
/// the canvas outside the window are background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlacedMask {
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub origin: (u32, u32),
    pub window: Mask,
}

impl PlacedMask {
    pub fn count(&self) -> u64 {
        self.window.count()
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        let (ox, oy) = self.origin;
        x >= ox
            && y >= oy
            && x < ox + self.window.width()
            && y < oy + self.window.height()
            && self.window.get(x - ox, y - oy)
    }

    pub fn to_canvas_mask(&self) -> Mask {
        let mut full = Mask::new(self.canvas_w, self.canvas_h);
        let (ox, oy) = self.origin;
        for y in 0..self.window.height() {
            let src = self.window.row(y);
            let dst = full.row_mut(oy + y);
            dst[ox as usize..ox as usize + src.len()].copy_from_slice(src);
        }
        full
    }

    /// Bounding box in canvas coordinates.
    pub fn bbox(&self) -> Option<BBox> {
        self.window.bbox().map(|b| BBox {
            x: b.x + self.origin.0,
            y: b.y + self.origin.1,
            ..b
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_of_block() {
        let m = Mask::from_fn(10, 10, |x, y| (2..=5).contains(&x) && (3..=7).contains(&y));
        assert_eq!(m.bbox(), Some(BBox { x: 2, y: 3, w: 4, h: 5 }));
        assert_eq!(m.count(), 20);
        assert_eq!(Mask::new(3, 3).bbox(), None);
    }

    #[test]
    fn placed_mask_expands() {
        let window = Mask::from_fn(2, 2, |_, _| true);
        let p = PlacedMask { canvas_w: 4, canvas_h: 4, origin: (1, 2), window };
        let full = p.to_canvas_mask();
        assert_eq!(full.count(), 4);
        assert!(full.get(1, 2) && full.get(2, 3));
        assert!(p.contains(2, 3) && !p.contains(0, 0));
        assert_eq!(p.bbox(), Some(BBox { x: 1, y: 2, w: 2, h: 2 }));
    }
}
