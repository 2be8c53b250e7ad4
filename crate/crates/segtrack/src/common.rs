//! Shared raster types: rectangles, binary masks, LAB and grayscale buffers.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle; `x`, `y` is the top-left corner, extents in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    /// True when `self` lies entirely inside a `w` x `h` frame.
    pub fn inside_frame(&self, w: u32, h: u32) -> bool {
        self.right() <= w && self.bottom() <= h
    }
}

/// Full-frame binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[(y * width + x) as usize] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| !b)
    }

    pub fn same_dims(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Tight bounding box of the set pixels, `None` when empty.
    pub fn tight_box(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    /// Write as a 1-bit grayscale PNG (set pixels white).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
        let row_bytes = (self.width as usize).div_ceil(8);
        let mut packed = vec![0u8; row_bytes * self.height as usize];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    packed[y as usize * row_bytes + (x / 8) as usize] |= 0x80 >> (x % 8);
                }
            }
        }
        writer
            .write_image_data(&packed)
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
        Ok(())
    }

    /// Load any grayscale/color PNG as a mask: nonzero pixel = set.
    pub fn load_png(path: &Path) -> Result<Mask> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Mask::from_fn(w, h, |x, y| img.get_pixel(x, y)[0] != 0))
    }
}

/// CIE-LAB raster over a region; one `[l, a, b]` triple per pixel, row-major.
#[derive(Debug, Clone)]
pub struct LabImage {
    width: u32,
    height: u32,
    data: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn new(width: u32, height: u32, data: Vec<[f64; 3]>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        LabImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.data[(y * self.width + x) as usize]
    }
}

/// Grayscale intensity raster (0..255 range, f32), used by the flow estimator.
#[derive(Debug, Clone)]
pub struct GrayFrame {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl GrayFrame {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        GrayFrame {
            width,
            height,
            data,
        }
    }

    /// Rec. 601 luma of an RGB frame.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x, y);
                data.push(0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32);
            }
        }
        GrayFrame {
            width: w,
            height: h,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    /// Clamped access, replicating the border.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f32 {
        let x = x.clamp(0, self.width as i64 - 1) as u32;
        let y = y.clamp(0, self.height as i64 - 1) as u32;
        self.get(x, y)
    }

    pub fn crop(&self, rect: Rect) -> GrayFrame {
        assert!(rect.inside_frame(self.width, self.height));
        let mut data = Vec::with_capacity((rect.w * rect.h) as usize);
        for y in rect.y..rect.bottom() {
            for x in rect.x..rect.right() {
                data.push(self.get(x, y));
            }
        }
        GrayFrame {
            width: rect.w,
            height: rect.h,
            data,
        }
    }
}
