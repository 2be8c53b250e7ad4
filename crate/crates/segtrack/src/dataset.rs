//! Sequence ingestion (flat DAVIS-style layout) and synthetic sequence
//! generation with exact ground truth.
//!
//! Layout convention: `<root>/<name>/frames/%05d.png|jpg` plus
//! `<root>/<name>/masks/%05d.png` where any nonzero mask pixel marks the
//! target. Frame 0 must have a mask; later masks are optional.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common::Mask;
use crate::error::{Error, Result};

/// An ordered run of frames with (partial) ground-truth masks.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<RgbImage>,
    pub masks: Vec<Option<Mask>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    /// The frame-0 mask; present by construction.
    pub fn initial_mask(&self) -> &Mask {
        self.masks[0].as_ref().expect("frame 0 mask")
    }
}

fn indexed_files(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<usize, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| extensions.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if !ext_ok {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Ok(index) = stem.parse::<usize>() else {
            continue;
        };
        out.insert(index, path);
    }
    Ok(out)
}

/// Load `<root>/<name>` into memory. Frames are sorted by index; masks are
/// binarized (nonzero = target).
pub fn load_sequence(root: &Path, name: &str) -> Result<Sequence> {
    let dir = root.join(name);
    let frames_dir = dir.join("frames");
    let masks_dir = dir.join("masks");
    if !frames_dir.is_dir() {
        return Err(Error::InvalidInput(format!(
            "missing frames directory {}",
            frames_dir.display()
        )));
    }
    if !masks_dir.is_dir() {
        return Err(Error::InvalidInput(format!(
            "missing masks directory {}",
            masks_dir.display()
        )));
    }

    let frame_files = indexed_files(&frames_dir, &["png", "jpg", "jpeg"])?;
    if frame_files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no frames in {}",
            frames_dir.display()
        )));
    }
    let mask_files = indexed_files(&masks_dir, &["png"])?;

    let mut frames = Vec::with_capacity(frame_files.len());
    let mut masks = Vec::with_capacity(frame_files.len());
    let mut dims = None;
    for (slot, (&index, path)) in frame_files.iter().enumerate() {
        if index != slot {
            return Err(Error::InvalidInput(format!(
                "frame indices must be contiguous from 0; missing {slot}"
            )));
        }
        let img = image::open(path)?.to_rgb8();
        match dims {
            None => dims = Some(img.dimensions()),
            Some(d) if d != img.dimensions() => {
                return Err(Error::InvalidInput(format!(
                    "frame {index} has dimensions {:?}, expected {:?}",
                    img.dimensions(),
                    d
                )));
            }
            _ => {}
        }
        let mask = match mask_files.get(&index) {
            Some(mpath) => {
                let m = Mask::load_png(mpath)?;
                if (m.width(), m.height()) != img.dimensions() {
                    return Err(Error::InvalidInput(format!(
                        "mask {index} dimensions do not match frame"
                    )));
                }
                Some(m)
            }
            None => None,
        };
        frames.push(img);
        masks.push(mask);
    }

    if masks[0].is_none() {
        return Err(Error::InvalidInput("frame 0 has no ground-truth mask".into()));
    }

    Ok(Sequence {
        name: name.to_string(),
        frames,
        masks,
    })
}

/// Write a sequence in the flat layout (used by the synth command).
pub fn save_sequence(root: &Path, seq: &Sequence) -> Result<()> {
    let dir = root.join(&seq.name);
    let frames_dir = dir.join("frames");
    let masks_dir = dir.join("masks");
    std::fs::create_dir_all(&frames_dir)?;
    std::fs::create_dir_all(&masks_dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        frame.save(frames_dir.join(format!("{i:05}.png")))?;
    }
    for (i, mask) in seq.masks.iter().enumerate() {
        if let Some(m) = mask {
            m.save_png(&masks_dir.join(format!("{i:05}.png")))?;
        }
    }
    Ok(())
}

/// Target shape of a synthetic sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Square,
    Disc,
}

/// Declarative synthetic sequence: a solid textured target of a distinct
/// color translating over a static textured background.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub shape: ShapeKind,
    /// Side length (square) or diameter (disc), pixels.
    pub size: u32,
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub target_rgb: [u8; 3],
    pub background_rgb: [u8; 3],
    /// Gaussian texture noise, intensity levels; static per pixel.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            name: "synth".into(),
            width: 64,
            height: 64,
            frames: 30,
            shape: ShapeKind::Square,
            size: 14,
            start: (3.0, 3.0),
            velocity: (1.2, 1.6),
            target_rgb: [220, 60, 30],
            background_rgb: [90, 110, 90],
            noise_sigma: 5.0,
            seed: 7,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn noisy(base: [u8; 3], sigma: f64, rng: &mut ChaCha8Rng) -> image::Rgb<u8> {
    let n = gaussian(rng) * sigma;
    image::Rgb([
        (base[0] as f64 + n).clamp(0.0, 255.0) as u8,
        (base[1] as f64 + n).clamp(0.0, 255.0) as u8,
        (base[2] as f64 + n).clamp(0.0, 255.0) as u8,
    ])
}

fn shape_pixels(spec: &SynthSpec, dx: u32, dy: u32) -> bool {
    match spec.shape {
        ShapeKind::Square => true,
        ShapeKind::Disc => {
            let r = spec.size as f64 / 2.0;
            let cx = dx as f64 + 0.5 - r;
            let cy = dy as f64 + 0.5 - r;
            cx * cx + cy * cy <= r * r
        }
    }
}

/// Generate a deterministic synthetic sequence with exact per-frame masks.
pub fn synth_sequence(spec: &SynthSpec) -> Result<Sequence> {
    if spec.frames == 0 {
        return Err(Error::InvalidParameter {
            name: "frames",
            reason: "must be at least 1".into(),
        });
    }
    if spec.size == 0 || spec.size > spec.width.min(spec.height) {
        return Err(Error::InvalidParameter {
            name: "size",
            reason: format!("shape size {} does not fit the frame", spec.size),
        });
    }

    // Validate the whole trajectory before rendering anything.
    let mut positions = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let x = (spec.start.0 + k as f64 * spec.velocity.0).round() as i64;
        let y = (spec.start.1 + k as f64 * spec.velocity.1).round() as i64;
        if x < 0
            || y < 0
            || x + spec.size as i64 > spec.width as i64
            || y + spec.size as i64 > spec.height as i64
        {
            return Err(Error::InvalidInput(format!(
                "trajectory leaves the frame at frame {k} (top-left {x},{y})"
            )));
        }
        positions.push((x as u32, y as u32));
    }

    // Static textures: the background stays put, the target patch moves
    // rigidly with the shape.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = RgbImage::from_fn(spec.width, spec.height, |_, _| {
        noisy(spec.background_rgb, spec.noise_sigma, &mut rng)
    });
    let mut patch = image::RgbImage::new(spec.size, spec.size);
    for dy in 0..spec.size {
        for dx in 0..spec.size {
            patch.put_pixel(dx, dy, noisy(spec.target_rgb, spec.noise_sigma, &mut rng));
        }
    }

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for &(px, py) in &positions {
        let mut frame = background.clone();
        let mut mask = Mask::new(spec.width, spec.height);
        for dy in 0..spec.size {
            for dx in 0..spec.size {
                if shape_pixels(spec, dx, dy) {
                    frame.put_pixel(px + dx, py + dy, *patch.get_pixel(dx, dy));
                    mask.set(px + dx, py + dy, true);
                }
            }
        }
        frames.push(frame);
        masks.push(Some(mask));
    }

    Ok(Sequence {
        name: spec.name.clone(),
        frames,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid(mask: &Mask) -> (f64, f64) {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0.0;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        (sx / n, sy / n)
    }

    #[test]
    fn zero_velocity_gives_identical_frames() {
        let spec = SynthSpec {
            velocity: (0.0, 0.0),
            frames: 5,
            ..SynthSpec::default()
        };
        let seq = synth_sequence(&spec).unwrap();
        assert_eq!(seq.len(), 5);
        for i in 1..5 {
            assert_eq!(seq.frames[i], seq.frames[0]);
            assert_eq!(seq.masks[i], seq.masks[0]);
        }
    }

    #[test]
    fn unit_velocity_advances_centroid() {
        let spec = SynthSpec {
            velocity: (1.0, 0.0),
            frames: 10,
            start: (2.0, 20.0),
            size: 10,
            width: 64,
            height: 64,
            ..SynthSpec::default()
        };
        let seq = synth_sequence(&spec).unwrap();
        for i in 1..10 {
            let (cx0, cy0) = centroid(seq.masks[i - 1].as_ref().unwrap());
            let (cx1, cy1) = centroid(seq.masks[i].as_ref().unwrap());
            assert!((cx1 - cx0 - 1.0).abs() < 1e-9);
            assert!((cy1 - cy0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let spec = SynthSpec::default();
        let a = synth_sequence(&spec).unwrap();
        let b = synth_sequence(&spec).unwrap();
        for i in 0..a.len() {
            assert_eq!(a.frames[i], b.frames[i]);
            assert_eq!(a.masks[i], b.masks[i]);
        }
    }

    #[test]
    fn trajectory_escape_rejected() {
        let spec = SynthSpec {
            velocity: (10.0, 0.0),
            frames: 10,
            ..SynthSpec::default()
        };
        assert!(matches!(
            synth_sequence(&spec),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn disc_mask_matches_rendered_pixels() {
        let spec = SynthSpec {
            shape: ShapeKind::Disc,
            size: 9,
            frames: 2,
            velocity: (1.0, 0.0),
            ..SynthSpec::default()
        };
        let seq = synth_sequence(&spec).unwrap();
        let mask = seq.masks[0].as_ref().unwrap();
        // Disc area close to pi r^2 and strictly inside the bounding square.
        let count = mask.count_ones() as f64;
        let r = 4.5;
        assert!((count - std::f64::consts::PI * r * r).abs() < 12.0);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            frames: 2,
            name: "fixture".into(),
            ..SynthSpec::default()
        };
        let seq = synth_sequence(&spec).unwrap();
        save_sequence(dir.path(), &seq).unwrap();

        let loaded = load_sequence(dir.path(), "fixture").unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.dimensions(), seq.dimensions());
        assert_eq!(loaded.frames[0], seq.frames[0]);
        assert_eq!(loaded.masks[1], seq.masks[1]);
    }

    #[test]
    fn load_rejects_missing_masks_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("seq/frames")).unwrap();
        assert!(matches!(
            load_sequence(dir.path(), "seq"),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn load_rejects_missing_first_mask() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            frames: 2,
            name: "seq".into(),
            ..SynthSpec::default()
        };
        let seq = synth_sequence(&spec).unwrap();
        save_sequence(dir.path(), &seq).unwrap();
        std::fs::remove_file(dir.path().join("seq/masks/00000.png")).unwrap();
        assert!(matches!(
            load_sequence(dir.path(), "seq"),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn load_binarizes_gray_masks() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("seq");
        std::fs::create_dir_all(base.join("frames")).unwrap();
        std::fs::create_dir_all(base.join("masks")).unwrap();
        RgbImage::new(8, 8)
            .save(base.join("frames/00000.png"))
            .unwrap();
        // 0/255 gray PNG as mask.
        let gray = image::GrayImage::from_fn(8, 8, |x, _| image::Luma([if x < 4 { 0 } else { 255 }]));
        gray.save(base.join("masks/00000.png")).unwrap();

        let seq = load_sequence(dir.path(), "seq").unwrap();
        let mask = seq.initial_mask();
        assert!(!mask.get(0, 0));
        assert!(mask.get(5, 3));
        assert_eq!(mask.count_ones(), 32);
    }
}
