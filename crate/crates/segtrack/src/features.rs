//! Superpixel descriptors: sRGB to CIE-LAB conversion and per-superpixel
//! mean color.

use image::RgbImage;
use nalgebra::DMatrix;

use crate::common::{LabImage, Rect};
use crate::superpixel::SuperpixelMap;

/// Node-by-dimension descriptor matrix; rows are superpixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        FeatureMatrix { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Stack two feature matrices vertically (previous frame on top).
    pub fn stack(prev: &FeatureMatrix, curr: &FeatureMatrix) -> FeatureMatrix {
        assert_eq!(prev.dim(), curr.dim());
        let d = prev.dim();
        let n = prev.n() + curr.n();
        let mut values = DMatrix::zeros(n, d);
        values.rows_mut(0, prev.n()).copy_from(&prev.values);
        values.rows_mut(prev.n(), curr.n()).copy_from(&curr.values);
        FeatureMatrix { values }
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// 8-bit sRGB to CIE-LAB under the D65 white point.
///
/// L in [0, 100]; a, b stay within [-128, 127] for the sRGB gamut.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0] as f64 / 255.0);
    let g = srgb_to_linear(rgb[1] as f64 / 255.0);
    let b = srgb_to_linear(rgb[2] as f64 / 255.0);

    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    let fx = lab_f(x / 0.95047);
    let fy = lab_f(y / 1.0);
    let fz = lab_f(z / 1.08883);

    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Convert a rectangular crop of an RGB frame to a LAB region.
pub fn lab_from_rgb_region(img: &RgbImage, rect: Rect) -> LabImage {
    assert!(rect.inside_frame(img.width(), img.height()));
    let mut data = Vec::with_capacity((rect.w * rect.h) as usize);
    for y in rect.y..rect.bottom() {
        for x in rect.x..rect.right() {
            data.push(rgb_to_lab(img.get_pixel(x, y).0));
        }
    }
    LabImage::new(rect.w, rect.h, data)
}

/// Arithmetic-mean LAB color of every superpixel; row i belongs to label i.
pub fn mean_features(region: &LabImage, map: &SuperpixelMap) -> FeatureMatrix {
    assert_eq!(region.width(), map.width());
    assert_eq!(region.height(), map.height());
    let k = map.k();
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for y in 0..region.height() {
        for x in 0..region.width() {
            let l = map.label(x, y) as usize;
            let lab = region.get(x, y);
            for c in 0..3 {
                sums[l][c] += lab[c];
            }
            counts[l] += 1;
        }
    }
    let mut values = DMatrix::zeros(k, 3);
    for i in 0..k {
        debug_assert!(counts[i] > 0, "label {} has no pixels", i);
        for c in 0..3 {
            values[(i, c)] = sums[i][c] / counts[i] as f64;
        }
    }
    FeatureMatrix::from_matrix(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::SuperpixelMap;
    use crate::testsupport::uniform_lab;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lab_black_and_white() {
        let black = rgb_to_lab([0, 0, 0]);
        assert!(black.iter().all(|v| v.abs() < 1e-9));

        let white = rgb_to_lab([255, 255, 255]);
        assert!((white[0] - 100.0).abs() < 0.01);
        assert!(white[1].abs() < 0.01);
        assert!(white[2].abs() < 0.01);
    }

    #[test]
    fn lab_red_reference_value() {
        let red = rgb_to_lab([255, 0, 0]);
        assert!((red[0] - 53.24).abs() < 0.1, "L = {}", red[0]);
        assert!((red[1] - 80.09).abs() < 0.1, "a = {}", red[1]);
        assert!((red[2] - 67.20).abs() < 0.1, "b = {}", red[2]);
    }

    #[test]
    fn lab_stays_in_range_over_gamut() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let rgb = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
            let lab = rgb_to_lab(rgb);
            assert!((0.0 - 1e-9..=100.0 + 1e-9).contains(&lab[0]), "{:?}", lab);
            assert!((-128.0..=127.0).contains(&lab[1]), "{:?}", lab);
            assert!((-128.0..=127.0).contains(&lab[2]), "{:?}", lab);
        }
    }

    fn striped_map(w: u32, h: u32, k: usize) -> SuperpixelMap {
        let labels = (0..(w * h))
            .map(|i| ((i % w) as usize * k / w as usize) as u32)
            .collect();
        SuperpixelMap::from_labels(labels, w, h, k)
    }

    #[test]
    fn mean_of_uniform_region_is_the_color() {
        let region = uniform_lab(8, 4, [42.0, 5.0, -7.0]);
        let map = striped_map(8, 4, 4);
        let feats = mean_features(&region, &map);
        assert_eq!(feats.n(), 4);
        for i in 0..4 {
            let row = feats.node(i);
            assert!((row[0] - 42.0).abs() < 1e-12);
            assert!((row[1] - 5.0).abs() < 1e-12);
            assert!((row[2] + 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_superpixel_mean_is_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<[f64; 3]> = (0..20)
            .map(|_| {
                [
                    rng.random_range(0.0..100.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ]
            })
            .collect();
        let mut expect = [0.0f64; 3];
        for p in &data {
            for c in 0..3 {
                expect[c] += p[c];
            }
        }
        for e in expect.iter_mut() {
            *e /= 20.0;
        }
        let region = LabImage::new(5, 4, data);
        let map = SuperpixelMap::from_labels(vec![0; 20], 5, 4, 1);
        let feats = mean_features(&region, &map);
        let row = feats.node(0);
        for c in 0..3 {
            assert!((row[c] - expect[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_matches_second_pass_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h, k) = (11u32, 7u32, 5usize);
        let data: Vec<[f64; 3]> = (0..(w * h) as usize)
            .map(|_| {
                [
                    rng.random_range(0.0..100.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ]
            })
            .collect();
        let labels: Vec<u32> = (0..(w * h) as usize)
            .map(|i| if i < k { i as u32 } else { rng.random_range(0..k as u32) })
            .collect();
        let region = LabImage::new(w, h, data);
        let map = SuperpixelMap::from_labels(labels, w, h, k);
        let feats = mean_features(&region, &map);

        // Independent accumulation, one label at a time.
        for label in 0..k {
            let mut sum = [0.0f64; 3];
            let mut cnt = 0usize;
            for y in 0..h {
                for x in 0..w {
                    if map.label(x, y) == label as u32 {
                        let lab = region.get(x, y);
                        for c in 0..3 {
                            sum[c] += lab[c];
                        }
                        cnt += 1;
                    }
                }
            }
            let row = feats.node(label);
            for c in 0..3 {
                assert!((row[c] - sum[c] / cnt as f64).abs() < 1e-9);
            }
        }

        // Convex hull: each mean stays inside componentwise min/max.
        for label in 0..k {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for y in 0..h {
                for x in 0..w {
                    if map.label(x, y) == label as u32 {
                        let lab = region.get(x, y);
                        for c in 0..3 {
                            lo[c] = lo[c].min(lab[c]);
                            hi[c] = hi[c].max(lab[c]);
                        }
                    }
                }
            }
            let row = feats.node(label);
            for c in 0..3 {
                assert!(row[c] >= lo[c] - 1e-12 && row[c] <= hi[c] + 1e-12);
            }
        }
    }

    #[test]
    fn label_permutation_permutes_rows() {
        let region = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let data = (0..24)
                .map(|_| {
                    [
                        rng.random_range(0.0..100.0),
                        rng.random_range(-40.0..40.0),
                        rng.random_range(-40.0..40.0),
                    ]
                })
                .collect();
            LabImage::new(6, 4, data)
        };
        let map = striped_map(6, 4, 3);
        let perm = [2u32, 0, 1];
        let permuted = SuperpixelMap::from_labels(
            map.labels().iter().map(|&l| perm[l as usize]).collect(),
            6,
            4,
            3,
        );
        let a = mean_features(&region, &map);
        let b = mean_features(&region, &permuted);
        for i in 0..3 {
            assert_eq!(a.node(i), b.node(perm[i] as usize));
        }
    }
}
