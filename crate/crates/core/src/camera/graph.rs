//! The differentiable camera chain recorded on an autodiff [`Tape`].
//!
//! Mirrors [`camera_forward`](super::camera_forward) in
//! [`CameraMode::Differentiable`](super::CameraMode) with the same random
//! draws, so the two agree to rounding. Spectral inputs are band-major
//! `[31, pixels]` buffers and images are channel-major `[3, pixels]`.

use super::jpeg::{dct_basis, quant_table, BLOCK};
use crate::autodiff::{Tape, Unary, Var};
use crate::error::{Error, Result};
use crate::response::Matrix3;
use crate::rng::CounterRng;
use crate::types::N_BANDS;
use std::sync::Arc;

/// Trainable camera quantities as tape nodes (all scalars except the
/// 31-long displacement).
#[derive(Debug, Clone, Copy)]
pub struct CameraVars {
    pub displacement: Var,
    pub sigma: Var,
    pub nu: Var,
    /// Brightness; `None` when the image is normalised afterwards.
    pub mu: Option<Var>,
}

/// `max(base + displacement, 0)` as a `[3, 31]` node.
pub fn effective_matrix(tape: &mut Tape, base: &Matrix3, displacement: Var) -> Var {
    let flat: Vec<f64> = base.iter().flatten().copied().collect();
    let base = tape.constant(flat);
    let index: Vec<usize> = (0..3).flat_map(|_| 0..N_BANDS).collect();
    let spread = tape.gather(displacement, Arc::new(index));
    let sum = tape.add(base, spread);
    tape.relu(sum)
}

/// `[3, 31] × [31, pixels]`.
pub fn project(tape: &mut Tape, matrix: Var, cube: Var, pixels: usize) -> Var {
    tape.matmul(matrix, cube, 3, N_BANDS, pixels)
}

/// Reparameterised thermal and shot noise with fixed draws from `rng`.
pub fn noise(tape: &mut Tape, x: Var, cam: &CameraVars, rng: &CounterRng) -> Var {
    let n = tape.len_of(x);
    let g: Vec<f64> = (0..n as u64).map(|e| rng.normal(e, 0)).collect();
    let eps: Vec<f64> = (0..n as u64).map(|e| rng.normal(e, 1)).collect();
    let g = tape.constant(g);
    let thermal = tape.mul_scalar(g, cam.sigma);
    let shifted = tape.add(x, thermal);
    let scaled = tape.mul_scalar(shifted, cam.nu);
    let rate = tape.relu(scaled);
    let spread = tape.unary(rate, Unary::SqrtPos);
    let shot = tape.mul_const(spread, Arc::new(eps));
    let count = tape.add(rate, shot);
    let count = match cam.mu {
        Some(mu) => tape.mul_scalar(count, mu),
        None => count,
    };
    let inv_nu = tape.recip(cam.nu);
    tape.mul_scalar(count, inv_nu)
}

/// Min-max normalisation to `[0, 1]`.
pub fn normalize(tape: &mut Tape, x: Var) -> Result<Var> {
    let mm = tape.min_max(x);
    let (lo, hi) = (tape.value(mm)[0], tape.value(mm)[1]);
    if !(hi > lo) {
        return Err(Error::DegenerateRange(format!(
            "image values span [{lo}, {hi}]; cannot normalise"
        )));
    }
    let lo = tape.gather(mm, Arc::new(vec![0]));
    let hi = tape.gather(mm, Arc::new(vec![1]));
    let neg_lo = tape.scale(lo, -1.0);
    let shifted = tape.add_scalar(x, neg_lo);
    let span = tape.sub(hi, lo);
    let inv = tape.recip(span);
    Ok(tape.mul_scalar(shifted, inv))
}

/// sRGB encoding; inputs must already lie in `[0, 1]`.
pub fn gamma(tape: &mut Tape, x: Var) -> Result<Var> {
    if let Some(v) = tape.value(x).iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("gamma input {v} outside [0, 1]")));
    }
    Ok(tape.unary(x, Unary::SrgbEncode))
}

/// Block DCT quantisation with the smooth rounding staircase.
pub fn jpeg(tape: &mut Tape, x: Var, height: usize, width: usize, quality: u8) -> Var {
    let plane = height * width;
    let (nby, nbx) = (height.div_ceil(BLOCK), width.div_ceil(BLOCK));
    let blocks = 3 * nby * nbx;

    let mut pad = Vec::with_capacity(blocks * 64);
    for c in 0..3 {
        for by in 0..nby {
            for bx in 0..nbx {
                for y in 0..BLOCK {
                    let r = (by * BLOCK + y).min(height - 1);
                    for xx in 0..BLOCK {
                        let col = (bx * BLOCK + xx).min(width - 1);
                        pad.push(c * plane + r * width + col);
                    }
                }
            }
        }
    }
    let mut crop = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        for r in 0..height {
            for col in 0..width {
                let block = (c * nby + r / BLOCK) * nbx + col / BLOCK;
                crop.push(block * 64 + (r % BLOCK) * BLOCK + col % BLOCK);
            }
        }
    }

    let d = dct_basis();
    let mut forward = vec![0.0; 64 * 64];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            for y in 0..BLOCK {
                for xx in 0..BLOCK {
                    forward[(u * BLOCK + v) * 64 + y * BLOCK + xx] = d[u][y] * d[v][xx];
                }
            }
        }
    }
    let mut inverse = vec![0.0; 64 * 64];
    for i in 0..64 {
        for j in 0..64 {
            inverse[j * 64 + i] = forward[i * 64 + j];
        }
    }
    let table = quant_table(quality);
    let inv_q: Vec<f64> = (0..blocks).flat_map(|_| table.map(|q| 1.0 / q)).collect();
    let q: Vec<f64> = (0..blocks).flat_map(|_| table).collect();

    let code = tape.scale(x, 255.0);
    let code = tape.offset(code, -128.0);
    let padded = tape.gather(code, Arc::new(pad));
    let coeffs = tape.block_linear(padded, Arc::new(forward), 64);
    let scaled = tape.mul_const(coeffs, Arc::new(inv_q));
    let rounded = tape.unary(scaled, Unary::SoftRound);
    let dequant = tape.mul_const(rounded, Arc::new(q));
    let back = tape.block_linear(dequant, Arc::new(inverse), 64);
    let back = tape.offset(back, 128.0);
    let back = tape.scale(back, 1.0 / 255.0);
    let cropped = tape.gather(back, Arc::new(crop));
    tape.unary(cropped, Unary::Clamp01)
}

/// Whole differentiable chain from a band-major cube node to an RGB node.
#[allow(clippy::too_many_arguments)]
pub fn camera(
    tape: &mut Tape,
    cube: Var,
    height: usize,
    width: usize,
    base: &Matrix3,
    cam: &CameraVars,
    quality: u8,
    normalize_output: bool,
    rng: &CounterRng,
) -> Result<Var> {
    let pixels = height * width;
    if tape.len_of(cube) != N_BANDS * pixels {
        return Err(Error::Shape(format!(
            "cube node has {} values, expected {}",
            tape.len_of(cube),
            N_BANDS * pixels
        )));
    }
    let w = effective_matrix(tape, base, cam.displacement);
    let clean = project(tape, w, cube, pixels);
    let cam = CameraVars {
        mu: if normalize_output { None } else { cam.mu },
        ..*cam
    };
    let noisy = noise(tape, clean, &cam, rng);
    let scaled = if normalize_output {
        normalize(tape, noisy)?
    } else {
        noisy
    };
    let encoded = gamma(tape, scaled)?;
    Ok(jpeg(tape, encoded, height, width, quality))
}
