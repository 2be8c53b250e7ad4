//! Pixel-level optical flow between consecutive frames and the temporal
//! coupling block B.
//!
//! The built-in estimator is coarse-to-fine Horn-Schunck (3-level pyramid,
//! warping between levels). Precomputed flow can be ingested from Middlebury
//! `.flo` files instead, so an external estimator drops in unchanged.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::common::GrayFrame;
use crate::error::{Error, Result};
use crate::superpixel::SuperpixelMap;

const FLO_MAGIC: f32 = 202021.25;
const PYRAMID_LEVELS: usize = 3;
const MIN_LEVEL_SIZE: u32 = 8;

/// Per-pixel displacement field over the previous frame's region.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        FlowField {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn from_components(width: u32, height: u32, u: Vec<f32>, v: Vec<f32>) -> Self {
        assert_eq!(u.len(), (width * height) as usize);
        assert_eq!(v.len(), (width * height) as usize);
        FlowField {
            width,
            height,
            u,
            v,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn u(&self, x: u32, y: u32) -> f32 {
        self.u[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn v(&self, x: u32, y: u32) -> f32 {
        self.v[(y * self.width + x) as usize]
    }

    pub fn max_abs(&self) -> f32 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    /// Spatial crop (displacements are kept as-is).
    pub fn crop(&self, rect: crate::common::Rect) -> FlowField {
        assert!(rect.inside_frame(self.width, self.height));
        let mut u = Vec::with_capacity((rect.w * rect.h) as usize);
        let mut v = Vec::with_capacity((rect.w * rect.h) as usize);
        for y in rect.y..rect.bottom() {
            for x in rect.x..rect.right() {
                u.push(self.u(x, y));
                v.push(self.v(x, y));
            }
        }
        FlowField::from_components(rect.w, rect.h, u, v)
    }
}

fn downsample(img: &GrayFrame) -> GrayFrame {
    let w = (img.width() / 2).max(1);
    let h = (img.height() / 2).max(1);
    let mut data = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let sx = 2 * x + dx;
                    let sy = 2 * y + dy;
                    if sx < img.width() && sy < img.height() {
                        acc += img.get(sx, sy);
                        cnt += 1.0;
                    }
                }
            }
            data.push(acc / cnt);
        }
    }
    GrayFrame::new(w, h, data)
}

fn bilinear(img: &GrayFrame, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, img.width() as f32 - 1.0);
    let y = y.clamp(0.0, img.height() as f32 - 1.0);
    let x0 = x.floor() as i64;
    let y0 = y.floor() as i64;
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let p00 = img.get_clamped(x0, y0);
    let p10 = img.get_clamped(x0 + 1, y0);
    let p01 = img.get_clamped(x0, y0 + 1);
    let p11 = img.get_clamped(x0 + 1, y0 + 1);
    p00 * (1.0 - fx) * (1.0 - fy) + p10 * fx * (1.0 - fy) + p01 * (1.0 - fx) * fy + p11 * fx * fy
}

/// One Horn-Schunck fixed-point pass at a single scale, starting from the
/// given flow (applied by warping the current frame).
fn horn_schunck_level(
    prev: &GrayFrame,
    curr: &GrayFrame,
    u0: &mut [f32],
    v0: &mut [f32],
    alpha: f64,
    iters: usize,
) {
    let (w, h) = (prev.width(), prev.height());
    let n = (w * h) as usize;

    // Warp the current frame back by the incoming flow, then estimate the
    // residual motion between prev and the warped frame.
    let mut warped = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            warped.push(bilinear(curr, x as f32 + u0[i], y as f32 + v0[i]));
        }
    }
    let warped = GrayFrame::new(w, h, warped);

    let mut ix = vec![0.0f32; n];
    let mut iy = vec![0.0f32; n];
    let mut it = vec![0.0f32; n];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = (y as u32 * w + x as u32) as usize;
            ix[i] = 0.25
                * (prev.get_clamped(x + 1, y) - prev.get_clamped(x - 1, y)
                    + warped.get_clamped(x + 1, y)
                    - warped.get_clamped(x - 1, y));
            iy[i] = 0.25
                * (prev.get_clamped(x, y + 1) - prev.get_clamped(x, y - 1)
                    + warped.get_clamped(x, y + 1)
                    - warped.get_clamped(x, y - 1));
            it[i] = warped.get(x as u32, y as u32) - prev.get(x as u32, y as u32);
        }
    }

    let alpha2 = (alpha * alpha) as f32;
    let mut du = vec![0.0f32; n];
    let mut dv = vec![0.0f32; n];
    let mut du_next = vec![0.0f32; n];
    let mut dv_next = vec![0.0f32; n];

    // Weighted neighborhood average with the classic Horn-Schunck kernel.
    let average = |field: &[f32], x: i64, y: i64| -> f32 {
        let at = |xx: i64, yy: i64| -> f32 {
            let xx = xx.clamp(0, w as i64 - 1);
            let yy = yy.clamp(0, h as i64 - 1);
            field[(yy as u32 * w + xx as u32) as usize]
        };
        (at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)) / 6.0
            + (at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1)) / 12.0
    };

    for _ in 0..iters {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = (y as u32 * w + x as u32) as usize;
                let ub = average(&du, x, y);
                let vb = average(&dv, x, y);
                let t = (ix[i] * ub + iy[i] * vb + it[i]) / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]);
                du_next[i] = ub - ix[i] * t;
                dv_next[i] = vb - iy[i] * t;
            }
        }
        std::mem::swap(&mut du, &mut du_next);
        std::mem::swap(&mut dv, &mut dv_next);
    }

    for i in 0..n {
        u0[i] += du[i];
        v0[i] += dv[i];
    }
}

/// Estimate flow from `prev` to `curr` with pyramidal Horn-Schunck.
///
/// `smoothness` is the regularizer weight alpha; `iters` is the fixed-point
/// iteration count per pyramid level. Identical frames give exactly zero
/// flow.
pub fn estimate_flow(
    prev: &GrayFrame,
    curr: &GrayFrame,
    smoothness: f64,
    iters: usize,
) -> Result<FlowField> {
    if prev.width() != curr.width() || prev.height() != curr.height() {
        return Err(Error::DimensionMismatch {
            context: "estimate_flow",
            expected: format!("{}x{}", prev.width(), prev.height()),
            got: format!("{}x{}", curr.width(), curr.height()),
        });
    }

    let mut prev_levels = vec![prev.clone()];
    let mut curr_levels = vec![curr.clone()];
    while prev_levels.len() < PYRAMID_LEVELS {
        let last = prev_levels.last().unwrap();
        if last.width() / 2 < MIN_LEVEL_SIZE || last.height() / 2 < MIN_LEVEL_SIZE {
            break;
        }
        prev_levels.push(downsample(last));
        curr_levels.push(downsample(curr_levels.last().unwrap()));
    }

    let coarsest = prev_levels.len() - 1;
    let mut u = vec![0.0f32; (prev_levels[coarsest].width() * prev_levels[coarsest].height()) as usize];
    let mut v = u.clone();

    for level in (0..=coarsest).rev() {
        let pl = &prev_levels[level];
        let cl = &curr_levels[level];
        if level != coarsest {
            // Upsample the coarser estimate: nearest neighbor, doubled.
            let (cw, ch) = (prev_levels[level + 1].width(), prev_levels[level + 1].height());
            let (w, h) = (pl.width(), pl.height());
            let mut u_up = vec![0.0f32; (w * h) as usize];
            let mut v_up = vec![0.0f32; (w * h) as usize];
            for y in 0..h {
                for x in 0..w {
                    let sx = (x / 2).min(cw - 1);
                    let sy = (y / 2).min(ch - 1);
                    let si = (sy * cw + sx) as usize;
                    u_up[(y * w + x) as usize] = 2.0 * u[si];
                    v_up[(y * w + x) as usize] = 2.0 * v[si];
                }
            }
            u = u_up;
            v = v_up;
        }
        horn_schunck_level(pl, cl, &mut u, &mut v, smoothness, iters);
    }

    Ok(FlowField::from_components(prev.width(), prev.height(), u, v))
}

/// Parse a Middlebury `.flo` stream: magic 202021.25, little-endian i32
/// width and height, then interleaved row-major float32 (u, v).
pub fn read_flo_from<R: Read>(mut r: R) -> Result<FlowField> {
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)
        .map_err(|_| Error::Format("flo: truncated header".into()))?;
    let magic = f32::from_le_bytes(buf4);
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!(
            "flo: bad magic {magic}, expected {FLO_MAGIC}"
        )));
    }
    r.read_exact(&mut buf4)
        .map_err(|_| Error::Format("flo: truncated width".into()))?;
    let width = i32::from_le_bytes(buf4);
    r.read_exact(&mut buf4)
        .map_err(|_| Error::Format("flo: truncated height".into()))?;
    let height = i32::from_le_bytes(buf4);
    if width <= 0 || height <= 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(Error::Format(format!(
            "flo: implausible dimensions {width}x{height}"
        )));
    }
    let (width, height) = (width as u32, height as u32);
    let n = (width * height) as usize;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf4)
            .map_err(|_| Error::Format("flo: truncated data".into()))?;
        u.push(f32::from_le_bytes(buf4));
        r.read_exact(&mut buf4)
            .map_err(|_| Error::Format("flo: truncated data".into()))?;
        v.push(f32::from_le_bytes(buf4));
    }
    Ok(FlowField::from_components(width, height, u, v))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let file = File::open(path)?;
    read_flo_from(BufReader::new(file))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_flo_to<W: Write>(mut w: W, flow: &FlowField) -> Result<()> {
    w.write_all(&FLO_MAGIC.to_le_bytes())?;
    w.write_all(&(flow.width as i32).to_le_bytes())?;
    w.write_all(&(flow.height as i32).to_le_bytes())?;
    for i in 0..flow.u.len() {
        w.write_all(&flow.u[i].to_le_bytes())?;
        w.write_all(&flow.v[i].to_le_bytes())?;
    }
    Ok(())
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_flo_to(&mut w, flow)?;
    w.flush()?;
    Ok(())
}

/// Temporal coupling block: B[i][j] is the fraction of superpixel i's pixels
/// whose flow-displaced location lands inside superpixel j of the current
/// region. Displacements outside the current region count towards nothing,
/// so every row sums to at most 1.
pub fn temporal_links(
    map_prev: &SuperpixelMap,
    map_curr: &SuperpixelMap,
    flow: &FlowField,
) -> Result<DMatrix<f64>> {
    if flow.width != map_prev.width() || flow.height != map_prev.height() {
        return Err(Error::DimensionMismatch {
            context: "temporal_links flow",
            expected: format!("{}x{}", map_prev.width(), map_prev.height()),
            got: format!("{}x{}", flow.width, flow.height),
        });
    }
    let n_prev = map_prev.k();
    let n_curr = map_curr.k();
    let (ox_prev, oy_prev) = map_prev.origin();
    let (ox_curr, oy_curr) = map_curr.origin();

    let mut counts = DMatrix::<f64>::zeros(n_prev, n_curr);
    let sizes = map_prev.sizes();
    for y in 0..map_prev.height() {
        for x in 0..map_prev.width() {
            let i = map_prev.label(x, y) as usize;
            let fx = (ox_prev + x) as f64 + flow.u(x, y) as f64;
            let fy = (oy_prev + y) as f64 + flow.v(x, y) as f64;
            let rx = fx.round() as i64 - ox_curr as i64;
            let ry = fy.round() as i64 - oy_curr as i64;
            if rx >= 0 && ry >= 0 && (rx as u32) < map_curr.width() && (ry as u32) < map_curr.height()
            {
                let j = map_curr.label(rx as u32, ry as u32) as usize;
                counts[(i, j)] += 1.0;
            }
        }
    }
    for i in 0..n_prev {
        let size = sizes[i] as f64;
        for j in 0..n_curr {
            counts[(i, j)] /= size;
        }
    }
    Ok(counts)
}
