//! The camera forward model: spectral projection through the response
//! matrix, sensor noise and brightness, normalisation, sRGB gamma and an
//! 8×8 block DCT compression model.
//!
//! ```text
//! rgb = jpeg(gamma(normalize(noise(W · h))))
//! ```
//!
//! Two modes share the same random draws. `Sample` draws Poisson counts and
//! rounds DCT coefficients to integers; `Differentiable` replaces the Poisson
//! draw with its reparameterised Gaussian surrogate and the rounding with a
//! smooth staircase, so the whole chain has useful derivatives. The
//! differentiable chain is mirrored on the autodiff tape in [`graph`].

pub mod graph;
mod jpeg;
mod noise;

pub use jpeg::{dct8x8, idct8x8, jpeg_approx, quant_table, soft_round, BLOCK};
pub use noise::{apply_noise, poisson_sample, POISSON_INVERSION_LIMIT};

use crate::error::{Error, Result};
use crate::metrics::{min_max, normalize_unit};
use crate::response::ResponseMatrix;
use crate::rng::CounterRng;
use crate::types::{RgbImage, SpectralCube};

/// Below this value the sRGB curve is linear.
pub const SRGB_LINEAR_THRESHOLD: f64 = 0.0031308;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraMode {
    Sample,
    Differentiable,
}

/// Noise, brightness and compression settings of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    /// Thermal noise standard deviation on the projected signal.
    pub sigma: f64,
    /// Shot noise level: expected events per unit signal.
    pub nu: f64,
    /// Brightness factor. Ignored (treated as 1) when `normalize` is set.
    pub mu: f64,
    pub jpeg_quality: u8,
    pub mode: CameraMode,
    /// Rescale the noisy image to `[0, 1]` before gamma encoding.
    pub normalize: bool,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            nu: 1e4,
            mu: 1.0,
            jpeg_quality: 95,
            mode: CameraMode::Sample,
            normalize: true,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::param("sigma", format!("{} (must be >= 0)", self.sigma)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::param("nu", format!("{} (must be > 0)", self.nu)));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::param("mu", format!("{} (must be > 0)", self.mu)));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(Error::param(
                "jpeg_quality",
                format!("{} (must be in 1..=100)", self.jpeg_quality),
            ));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: CameraMode) -> Self {
        self.mode = mode;
        self
    }

    /// Brightness actually applied by [`camera_forward`].
    pub fn effective_mu(&self) -> f64 {
        if self.normalize {
            1.0
        } else {
            self.mu
        }
    }
}

/// `W_eff · spectrum` at every pixel.
pub fn project_to_rgb(h: &SpectralCube, rm: &ResponseMatrix) -> RgbImage {
    let w = rm.effective_matrix();
    let plane = h.pixels();
    let mut data = vec![0.0; 3 * plane];
    for (c, out) in data.chunks_mut(plane).enumerate() {
        for (b, weight) in w[c].iter().enumerate() {
            for (o, v) in out.iter_mut().zip(h.band(b)) {
                *o += weight * v;
            }
        }
    }
    RgbImage::new(h.height(), h.width(), data).expect("projection of a valid cube is finite")
}

#[inline]
pub fn srgb_encode_value(v: f64) -> f64 {
    if v <= SRGB_LINEAR_THRESHOLD {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn srgb_encode_derivative(v: f64) -> f64 {
    if v <= SRGB_LINEAR_THRESHOLD {
        12.92
    } else {
        1.055 / 2.4 * v.powf(1.0 / 2.4 - 1.0)
    }
}

/// Standard sRGB transfer curve; inputs must lie in `[0, 1]`.
pub fn gamma_encode(img: &RgbImage) -> Result<RgbImage> {
    if let Some(v) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!(
            "gamma input {v} outside [0, 1]"
        )));
    }
    let data = img.data().iter().map(|&v| srgb_encode_value(v)).collect();
    RgbImage::new(img.height(), img.width(), data)
}

/// Full forward model. With `p.normalize`, the brightness factor is fixed
/// to 1 because the normalisation removes any uniform scale, and a cube
/// whose projection is flat is rejected: normalising it would only stretch
/// the noise.
pub fn camera_forward(
    h: &SpectralCube,
    rm: &ResponseMatrix,
    p: &CameraParams,
    rng: &CounterRng,
) -> Result<RgbImage> {
    p.validate()?;
    let clean = project_to_rgb(h, rm);
    if p.normalize {
        let (lo, hi) = min_max(clean.data());
        if !(hi > lo) {
            return Err(Error::DegenerateRange(format!(
                "projected image is constant ({lo}); cannot normalise"
            )));
        }
    }
    let noisy = apply_noise(
        &clean,
        &CameraParams {
            mu: p.effective_mu(),
            ..*p
        },
        rng,
    );
    let scaled = if p.normalize {
        normalize_unit(&noisy)?
    } else {
        noisy
    };
    let encoded = gamma_encode(&scaled)?;
    Ok(jpeg_approx(&encoded, p.jpeg_quality, p.mode))
}
