//! Thermal (Gaussian) plus shot (Poisson) sensor noise.
//!
//! Draw layout per image element `e`: normal slot 0 is the thermal draw;
//! uniform draw 2 feeds Poisson inversion and normal slot 1 feeds either the
//! Gaussian Poisson approximation or the reparameterised surrogate.

use super::{CameraMode, CameraParams};
use crate::rng::CounterRng;
use crate::types::RgbImage;

/// Poisson draws use CDF inversion up to this rate, a rounded Gaussian above.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

/// `μ · P((value + N(0, σ)) · ν) / ν` per element.
pub fn apply_noise(rgb_clean: &RgbImage, p: &CameraParams, rng: &CounterRng) -> RgbImage {
    let data = rgb_clean
        .data()
        .iter()
        .enumerate()
        .map(|(e, &v)| noisy_value(v, e as u64, p, rng))
        .collect();
    RgbImage::new(rgb_clean.height(), rgb_clean.width(), data).expect("noise keeps values finite")
}

fn noisy_value(v: f64, e: u64, p: &CameraParams, rng: &CounterRng) -> f64 {
    let g = rng.normal(e, 0);
    let rate = ((v + p.sigma * g) * p.nu).max(0.0);
    let count = match p.mode {
        CameraMode::Sample => poisson_sample(rate, rng, e),
        CameraMode::Differentiable => {
            let eps = rng.normal(e, 1);
            let spread = if rate > 0.0 { rate.sqrt() } else { 0.0 };
            rate + spread * eps
        }
    };
    p.mu * count / p.nu
}

/// Poisson draw with the given rate for element `e`.
pub fn poisson_sample(rate: f64, rng: &CounterRng, e: u64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if rate <= POISSON_INVERSION_LIMIT {
        let u = rng.uniform(e, 2);
        let mut k = 0u32;
        let mut term = (-rate).exp();
        let mut cdf = term;
        while u > cdf && k < 1000 {
            k += 1;
            term *= rate / k as f64;
            cdf += term;
        }
        k as f64
    } else {
        let z = rng.normal(e, 1);
        (rate + rate.sqrt() * z).round().max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn poisson_inversion_moments() {
        let rng = CounterRng::new(11);
        for rate in [0.5, 4.0, 25.0] {
            let n = 100_000;
            let draws: Vec<f64> = (0..n).map(|e| poisson_sample(rate, &rng, e)).collect();
            let (mean, var) = moments(&draws);
            let se_mean = (rate / n as f64).sqrt();
            assert!((mean - rate).abs() < 3.0 * se_mean, "rate {rate}: mean {mean}");
            // Var of the sample variance for Poisson: (μ4 - σ⁴)/n with μ4 = λ + 3λ²
            let se_var = ((rate + 3.0 * rate * rate - rate * rate) / n as f64).sqrt();
            assert!((var - rate).abs() < 3.0 * se_var, "rate {rate}: var {var}");
        }
    }

    #[test]
    fn clamped_rate_gives_zero() {
        let img = RgbImage::filled(2, 2, -5.0);
        let p = CameraParams { sigma: 0.01, ..Default::default() };
        let out = apply_noise(&img, &p, &CounterRng::new(1));
        assert!(out.data().iter().all(|v| *v == 0.0));
        let out = apply_noise(&img, &p.with_mode(CameraMode::Differentiable), &CounterRng::new(1));
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn brightness_scales_output() {
        let img = RgbImage::filled(3, 3, 0.4);
        let p = CameraParams::default();
        let a = apply_noise(&img, &p, &CounterRng::new(2));
        let b = apply_noise(&img, &CameraParams { mu: 2.0, ..p }, &CounterRng::new(2));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn surrogate_shares_the_sample_mean() {
        let img = RgbImage::filled(1, 30_000, 0.3);
        let p = CameraParams {
            sigma: 0.0,
            nu: 100.0,
            mode: CameraMode::Differentiable,
            ..Default::default()
        };
        let out = apply_noise(&img, &p, &CounterRng::new(9));
        let (mean, var) = moments(out.data());
        let n = out.data().len() as f64;
        assert!((mean - 0.3).abs() < 3.0 * (0.3 / 100.0 / n).sqrt());
        assert!((var - 0.003).abs() < 3.0 * 0.003 * (2.0 / n).sqrt());
    }
}
