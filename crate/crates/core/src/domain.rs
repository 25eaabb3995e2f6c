//! Adversarial domain alignment between the spectral and material datasets.
//!
//! A logistic discriminator looks at pooled trunk features and tries to tell
//! the two datasets apart (spectral = 0, material = 1). The features reach it
//! through a gradient-reversal junction, so the trunk is pushed towards
//! features the discriminator cannot separate.

use crate::autodiff::{softplus, Tape, Var};
use crate::error::{Error, Result};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDiscriminator {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl DomainDiscriminator {
    pub fn zeros(width: usize) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
        }
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "discriminator expects {} features, got {}",
                self.weights.len(),
                features.len()
            )));
        }
        let z = self.bias + self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>();
        if !z.is_finite() {
            return Err(Error::NonFinite {
                term: "domain logit".into(),
                value: z,
            });
        }
        Ok(z)
    }
}

/// Mean binary cross-entropy over the two samples: spectral labelled 0,
/// material labelled 1.
pub fn domain_loss(features_s: &[f64], features_m: &[f64], disc: &DomainDiscriminator) -> Result<f64> {
    let zs = disc.logit(features_s)?;
    let zm = disc.logit(features_m)?;
    Ok(0.5 * (softplus(zs) + softplus(-zm)))
}

/// Tape version of [`domain_loss`]. `weights` is `[width]`, `bias` `[1]`.
/// With `reverse`, both feature nodes pass through a gradient-reversal
/// junction; without it the graph yields the plain gradient of the loss.
pub fn domain_loss_graph(tape: &mut Tape, pooled_s: Var, pooled_m: Var, weights: Var, bias: Var, reverse: bool) -> Var {
    let width = tape.len_of(weights);
    let (fs, fm) = if reverse {
        (tape.reverse_grad(pooled_s), tape.reverse_grad(pooled_m))
    } else {
        (pooled_s, pooled_m)
    };
    let feats = tape.concat(&[fs, fm]);
    let z = tape.matmul(feats, weights, 2, width, 1);
    let z = tape.add_bias(z, bias, 1);
    // softplus(z_s) and softplus(-z_m)
    let signed = tape.mul_const(z, Arc::new(vec![1.0, -1.0]));
    let per = tape.softplus(signed);
    tape.mean(per)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_gives_ln2() {
        let d = DomainDiscriminator::zeros(4);
        let l = domain_loss(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4], &d).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn separated_features_drive_loss_to_zero() {
        let d = DomainDiscriminator {
            weights: vec![50.0, 0.0],
            bias: 0.0,
        };
        let l = domain_loss(&[-1.0, 0.3], &[1.0, 0.3], &d).unwrap();
        assert!(l < 1e-20);
        assert!(l >= 0.0);
        assert!(domain_loss(&[1.0], &[1.0, 2.0], &d).is_err());
    }

    fn graph_run(fs: &[f64], fm: &[f64], w: &[f64], b: f64, reverse: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let mut t = Tape::new();
        let xs = t.leaf(fs.to_vec());
        let xm = t.leaf(fm.to_vec());
        let wv = t.leaf(w.to_vec());
        let bv = t.leaf(vec![b]);
        let loss = domain_loss_graph(&mut t, xs, xm, wv, bv, reverse);
        let g = t.backward(loss);
        (t.scalar(loss), g.get(xs).unwrap().to_vec(), g.get(wv).unwrap().to_vec())
    }

    #[test]
    fn graph_matches_plain_and_reverses_feature_gradient() {
        let fs = [0.3, -0.2, 0.9];
        let fm = [0.1, 0.5, -0.4];
        let w = [0.7, -1.1, 0.4];
        let b = 0.2;
        let disc = DomainDiscriminator { weights: w.to_vec(), bias: b };
        let plain = domain_loss(&fs, &fm, &disc).unwrap();
        let (val, gx, gw) = graph_run(&fs, &fm, &w, b, true);
        let (val0, gx0, gw0) = graph_run(&fs, &fm, &w, b, false);
        assert!((val - plain).abs() < 1e-15);
        assert_eq!(val, val0);
        for (a, b) in gx.iter().zip(&gx0) {
            assert_eq!(*a, -*b);
        }
        // the discriminator itself is not reversed
        assert_eq!(gw, gw0);

        // finite differences of the plain loss give the unreversed gradient
        let h = 1e-6;
        for i in 0..3 {
            let (mut p, mut m) = (fs, fs);
            p[i] += h;
            m[i] -= h;
            let numeric = (domain_loss(&p, &fm, &disc).unwrap() - domain_loss(&m, &fm, &disc).unwrap()) / (2.0 * h);
            assert!((numeric + gx[i]).abs() < 1e-8, "{numeric} vs {}", gx[i]);
        }
    }

    #[test]
    fn disc_descent_is_monotone_with_frozen_features() {
        let fs = [0.3, -0.2, 0.9];
        let fm = [0.1, 0.5, -0.4];
        let mut w = vec![0.0; 3];
        let mut b = 0.0;
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let mut t = Tape::new();
            let xs = t.constant(fs.to_vec());
            let xm = t.constant(fm.to_vec());
            let wv = t.leaf(w.clone());
            let bv = t.leaf(vec![b]);
            let loss = domain_loss_graph(&mut t, xs, xm, wv, bv, true);
            let value = t.scalar(loss);
            assert!(value <= last + 1e-15);
            last = value;
            let g = t.backward(loss);
            for (w, g) in w.iter_mut().zip(g.get(wv).unwrap()) {
                *w -= 0.5 * g;
            }
            b -= 0.5 * g.get(bv).unwrap()[0];
        }
        assert!(last < 0.1);
    }
}
