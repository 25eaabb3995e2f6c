//! Elementwise reductions used by the losses. All sums run sequentially in
//! storage order so results do not depend on the thread count.

use crate::error::{Error, Result};
use crate::types::{RgbImage, Samples, SpectralCube};

/// Denominator clamp for relative errors.
pub const DEFAULT_MRAE_EPSILON: f64 = 1e-6;

fn check_same<A: Samples, B: Samples>(a: &A, b: &B) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse<T: Samples>(a: &T, b: &T) -> Result<f64> {
    check_same(a, b)?;
    Ok(mse_values(a.values(), b.values()))
}

pub(crate) fn mse_values(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// Mean relative absolute error `|truth - est| / max(truth, epsilon)`.
pub fn mrae(truth: &SpectralCube, est: &SpectralCube, epsilon: f64) -> Result<f64> {
    check_same(truth, est)?;
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", "must be > 0"));
    }
    Ok(mrae_values(truth.data(), est.data(), epsilon))
}

pub(crate) fn mrae_values(truth: &[f64], est: &[f64], epsilon: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let sum: f64 = truth
        .iter()
        .zip(est)
        .map(|(t, e)| (t - e).abs() / t.max(epsilon))
        .sum();
    sum / truth.len() as f64
}

/// Affinely maps the image so its smallest value is 0 and its largest 1.
pub fn normalize_unit(img: &RgbImage) -> Result<RgbImage> {
    let (lo, hi) = min_max(img.data());
    if !(hi > lo) {
        return Err(Error::DegenerateRange(format!(
            "image values span [{lo}, {hi}]; cannot normalise"
        )));
    }
    let span = hi - lo;
    let data = img.data().iter().map(|v| (v - lo) / span).collect();
    RgbImage::new(img.height(), img.width(), data)
}

/// First-occurrence extrema, `(min, max)`.
pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}
