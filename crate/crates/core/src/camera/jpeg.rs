//! 8×8 block DCT quantisation model of in-camera compression.
//!
//! Values are mapped to the 8-bit sample range (`255·v − 128`) before the
//! transform, so a divisor of 1 corresponds to one code value. Images are
//! padded to whole blocks by edge replication and cropped afterwards.

use super::CameraMode;
use crate::types::RgbImage;
use std::f64::consts::{PI, TAU};

pub const BLOCK: usize = 8;

/// Annex K luminance table, natural (row-major) order.
const LUMA_TABLE: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Quality-scaled divisors, floored at 1.
pub fn quant_table(quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q >= 50.0 { (100.0 - q) / 50.0 } else { 50.0 / q };
    LUMA_TABLE.map(|t| (t * scale + 0.5).floor().max(1.0))
}

/// Orthonormal DCT-II basis, `basis[u][x]`.
pub(crate) fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    std::array::from_fn(|u| {
        let alpha = if u == 0 {
            (1.0 / BLOCK as f64).sqrt()
        } else {
            (2.0 / BLOCK as f64).sqrt()
        };
        std::array::from_fn(|x| alpha * (((2 * x + 1) * u) as f64 * PI / (2 * BLOCK) as f64).cos())
    })
}

/// Separable forward 2-D DCT of a row-major 8×8 block.
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let d = dct_basis();
    let mut rows = [0.0; 64];
    // transform along x
    for y in 0..BLOCK {
        for v in 0..BLOCK {
            rows[y * BLOCK + v] = (0..BLOCK).map(|x| d[v][x] * block[y * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            out[u * BLOCK + v] = (0..BLOCK).map(|y| d[u][y] * rows[y * BLOCK + v]).sum();
        }
    }
    out
}

/// Inverse of [`dct8x8`].
pub fn idct8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    let d = dct_basis();
    let mut cols = [0.0; 64];
    for y in 0..BLOCK {
        for v in 0..BLOCK {
            cols[y * BLOCK + v] = (0..BLOCK).map(|u| d[u][y] * coeffs[u * BLOCK + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|v| d[v][x] * cols[y * BLOCK + v]).sum();
        }
    }
    out
}

/// Smooth staircase `x − sin(2πx)/2π`, exact at integers.
#[inline]
pub fn soft_round(x: f64) -> f64 {
    x - (TAU * x).sin() / TAU
}

/// Compress and decompress every 8×8 block of every channel.
pub fn jpeg_approx(img: &RgbImage, quality: u8, mode: CameraMode) -> RgbImage {
    let (h, w) = (img.height(), img.width());
    let table = quant_table(quality);
    let (nby, nbx) = (h.div_ceil(BLOCK), w.div_ceil(BLOCK));
    let plane = h * w;
    let mut out = vec![0.0; 3 * plane];
    for c in 0..3 {
        let src = img.channel(c);
        for by in 0..nby {
            for bx in 0..nbx {
                let mut block = [0.0; 64];
                for y in 0..BLOCK {
                    let r = (by * BLOCK + y).min(h - 1);
                    for x in 0..BLOCK {
                        let col = (bx * BLOCK + x).min(w - 1);
                        block[y * BLOCK + x] = 255.0 * src[r * w + col] - 128.0;
                    }
                }
                let mut coeffs = dct8x8(&block);
                for (k, q) in coeffs.iter_mut().zip(&table) {
                    let scaled = *k / q;
                    let rounded = match mode {
                        CameraMode::Sample => scaled.round(),
                        CameraMode::Differentiable => soft_round(scaled),
                    };
                    *k = rounded * q;
                }
                let back = idct8x8(&coeffs);
                for y in 0..BLOCK {
                    let r = by * BLOCK + y;
                    if r >= h {
                        break;
                    }
                    for x in 0..BLOCK {
                        let col = bx * BLOCK + x;
                        if col >= w {
                            break;
                        }
                        out[c * plane + r * w + col] =
                            ((back[y * BLOCK + x] + 128.0) / 255.0).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    RgbImage::new(h, w, out).expect("block transform keeps values finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_block(seed: u64) -> [f64; 64] {
        let r = CounterRng::new(seed);
        std::array::from_fn(|i| r.uniform(i as u64, 0) * 255.0 - 128.0)
    }

    /// Textbook O(N⁴) DCT-II used as an independent reference.
    fn dct_reference(block: &[f64; 64]) -> [f64; 64] {
        let n = BLOCK as f64;
        std::array::from_fn(|k| {
            let (u, v) = (k / BLOCK, k % BLOCK);
            let cu = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let cv = if v == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let mut s = 0.0;
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    s += block[y * BLOCK + x]
                        * ((2.0 * y as f64 + 1.0) * u as f64 * PI / (2.0 * n)).cos()
                        * ((2.0 * x as f64 + 1.0) * v as f64 * PI / (2.0 * n)).cos();
                }
            }
            cu * cv * s
        })
    }

    #[test]
    fn dct_matches_reference_and_inverts() {
        for seed in 0..10 {
            let b = random_block(seed);
            let c = dct8x8(&b);
            let reference = dct_reference(&b);
            for (x, y) in c.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-10);
            }
            let back = idct8x8(&c);
            for (x, y) in back.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_block_is_dc_only() {
        let c = dct8x8(&[37.5; 64]);
        assert!((c[0] - 37.5 * 8.0).abs() < 1e-10);
        assert!(c[1..].iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn quant_table_scaling() {
        assert!(quant_table(100).iter().all(|q| *q == 1.0));
        assert_eq!(quant_table(50), LUMA_TABLE);
        assert_eq!(quant_table(25)[0], 32.0);
        assert!(quant_table(1).iter().all(|q| *q >= 1.0));
        assert_eq!(quant_table(95)[0], 2.0);
    }

    #[test]
    fn soft_round_is_exact_on_integers() {
        for k in -5..=5 {
            assert!((soft_round(k as f64) - k as f64).abs() < 1e-12);
        }
        assert!((soft_round(0.5) - 0.5).abs() < 1e-12);
        assert!((soft_round(0.25) - (0.25 - 1.0 / TAU)).abs() < 1e-12);
    }

    #[test]
    fn top_quality_roundtrip_is_close() {
        for seed in 0..20 {
            let r = CounterRng::new(seed);
            let (h, w) = (13, 21);
            let data = (0..3 * h * w).map(|i| r.uniform(i as u64, 0)).collect();
            let img = RgbImage::new(h, w, data).unwrap();
            for mode in [CameraMode::Sample, CameraMode::Differentiable] {
                let out = jpeg_approx(&img, 100, mode);
                let worst = out
                    .data()
                    .iter()
                    .zip(img.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(worst <= 0.02, "seed {seed} {mode:?}: {worst}");
            }
        }
    }

    #[test]
    fn lower_quality_loses_more() {
        let r = CounterRng::new(3);
        let data = (0..3 * 16 * 16).map(|i| r.uniform(i as u64, 0)).collect();
        let img = RgbImage::new(16, 16, data).unwrap();
        let err = |q| {
            let out = jpeg_approx(&img, q, CameraMode::Sample);
            crate::metrics::mse(&out, &img).unwrap()
        };
        assert!(err(20) > err(90));
        assert!(err(90) > err(100));
    }
}
