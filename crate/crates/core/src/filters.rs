//! Interpretable spectral filtering. Each filter is a softmax over the 31
//! bands, so its output at a pixel is a convex combination of that pixel's
//! band values and the learned weights read directly as a spectral curve.

use crate::autodiff::{softmax_into, Tape, Var};
use crate::error::{Error, Result};
use crate::table::{fmt_exact, Table};
use crate::types::{BandGrid, SpectralCube, N_BANDS};
use rayon::prelude::*;
use std::sync::Arc;

pub const DEFAULT_FILTERS: usize = 12;
/// Filter counts swept by the ablation harness.
pub const FILTER_SWEEP: [usize; 4] = [4, 8, 12, 16];

/// Trainable logits, `n_filters × 31`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    n_filters: usize,
    logits: Vec<f64>,
}

impl FilterBank {
    /// All logits zero: every filter is the uniform band average.
    pub fn new(n_filters: usize) -> Result<Self> {
        Self::from_logits(n_filters, vec![0.0; n_filters * N_BANDS])
    }

    pub fn from_logits(n_filters: usize, logits: Vec<f64>) -> Result<Self> {
        if n_filters == 0 {
            return Err(Error::param("n_filters", "must be at least 1"));
        }
        if logits.len() != n_filters * N_BANDS {
            return Err(Error::Shape(format!(
                "{n_filters} filters need {} logits, got {}",
                n_filters * N_BANDS,
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("filter logits", "must be finite"));
        }
        Ok(Self { n_filters, logits })
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// The effective non-negative, unit-sum filters.
    pub fn effective(&self) -> FilterTable {
        let mut weights = vec![0.0; self.logits.len()];
        for (o, row) in weights.chunks_mut(N_BANDS).zip(self.logits.chunks(N_BANDS)) {
            softmax_into(row, o);
        }
        FilterTable {
            n_filters: self.n_filters,
            weights,
        }
    }

    pub fn apply(&self, h: &SpectralCube) -> FeatureMap {
        apply_filters(h, &self.effective())
    }

    /// Curve CSV of the effective filters.
    pub fn to_csv(&self) -> String {
        self.effective().to_csv()
    }
}

/// Effective filter weights, `n_filters × 31`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTable {
    n_filters: usize,
    weights: Vec<f64>,
}

impl FilterTable {
    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn filter(&self, k: usize) -> &[f64] {
        &self.weights[k * N_BANDS..(k + 1) * N_BANDS]
    }

    fn header(n: usize) -> Vec<String> {
        std::iter::once("wavelength".to_string())
            .chain((1..=n).map(|k| format!("f{k}")))
            .collect()
    }

    /// `wavelength,f1..fN`, one row per band. Values print as the shortest
    /// decimal that parses back to the same number, so a re-import is exact.
    pub fn to_csv(&self) -> String {
        let mut out = Self::header(self.n_filters).join(",");
        out.push('\n');
        for b in 0..N_BANDS {
            out.push_str(&fmt_exact(BandGrid.wavelength(b)));
            for k in 0..self.n_filters {
                out.push(',');
                out.push_str(&fmt_exact(self.weights[k * N_BANDS + b]));
            }
            out.push('\n');
        }
        out
    }

    /// Reads a filter CSV. Each column must be non-negative and sum to 1
    /// within 1e-9.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let table = Table::parse(text, "filters")?;
        let n = table.header.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::format("filters", "no filter columns"));
        }
        table.expect_header(&Self::header(n), "filters")?;
        BandGrid.check(&table.column(0)?)?;
        let mut weights = vec![0.0; n * N_BANDS];
        for k in 0..n {
            let col = table.column(k + 1)?;
            let name = &table.header[k + 1];
            if col.iter().any(|w| *w < 0.0) {
                return Err(Error::format(name.clone(), "negative weight"));
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::format(name.clone(), format!("weights sum to {sum}, expected 1")));
            }
            weights[k * N_BANDS..(k + 1) * N_BANDS].copy_from_slice(&col);
        }
        Ok(Self { n_filters: n, weights })
    }
}

/// Per-pixel features, pixel-major: `data[p * n_features + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub n_features: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_features..(p + 1) * self.n_features]
    }
}

/// `feature_k = Σ_λ filter_{k,λ} · h_λ` at every pixel.
pub fn apply_filters(h: &SpectralCube, filters: &FilterTable) -> FeatureMap {
    let n = filters.n_filters;
    let pixels = h.pixels();
    let mut data = vec![0.0; pixels * n];
    data.par_chunks_mut(n).enumerate().for_each(|(p, out)| {
        let s = h.spectrum_at(p);
        for (k, o) in out.iter_mut().enumerate() {
            *o = filters.filter(k).iter().zip(&s).map(|(w, v)| w * v).sum();
        }
    });
    FeatureMap {
        height: h.height(),
        width: h.width(),
        n_features: n,
        data,
    }
}

/// Tape version: `logits` is `[n × 31]`, `spectra` is `[pixels × 31]`
/// pixel-major. Returns features `[pixels × n]`.
pub fn filters_graph(tape: &mut Tape, logits: Var, n_filters: usize, spectra: Var, pixels: usize) -> Var {
    let w = tape.softmax_rows(logits, N_BANDS);
    // transpose to [31 × n]
    let index: Vec<usize> = (0..N_BANDS)
        .flat_map(|b| (0..n_filters).map(move |k| k * N_BANDS + b))
        .collect();
    let wt = tape.gather(w, Arc::new(index));
    tape.matmul(spectra, wt, pixels, N_BANDS, n_filters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn cube_from(spectra: &[[f64; N_BANDS]], height: usize, width: usize) -> SpectralCube {
        SpectralCube::from_fn(height, width, |r, c| spectra[r * width + c]).unwrap()
    }

    fn random_bank(n: usize, seed: u64, scale: f64) -> FilterBank {
        let mut rng = seeded(seed);
        let logits = (0..n * N_BANDS).map(|_| rng.gen_range(-scale..scale)).collect();
        FilterBank::from_logits(n, logits).unwrap()
    }

    #[test]
    fn uniform_filter_gives_band_mean() {
        let mut s = [0.0; N_BANDS];
        for (i, v) in s.iter_mut().enumerate() {
            *v = 0.1 + 0.02 * i as f64;
        }
        let f = FilterBank::new(3).unwrap().apply(&cube_from(&[s], 1, 1));
        let mean = s.iter().sum::<f64>() / N_BANDS as f64;
        for k in 0..3 {
            assert!((f.pixel(0)[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn peaked_filter_picks_its_band() {
        let mut logits = vec![0.0; N_BANDS];
        logits[7] = 60.0;
        let bank = FilterBank::from_logits(1, logits).unwrap();
        let mut s = [0.3; N_BANDS];
        s[7] = 0.9;
        let f = bank.apply(&cube_from(&[s], 1, 1));
        assert!((f.pixel(0)[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn three_band_dot_product() {
        let w = [0.5, 0.25, 0.25];
        let s = [0.2, 0.5, 0.3];
        let v: f64 = w.iter().zip(&s).map(|(a, b)| a * b).sum();
        assert!((v - 0.3).abs() < 1e-15);
        // same through a table with those weights on three bands
        let mut weights = vec![0.0; N_BANDS];
        weights[..3].copy_from_slice(&w);
        let table = FilterTable { n_filters: 1, weights };
        let mut sp = [0.0; N_BANDS];
        sp[..3].copy_from_slice(&s);
        let f = apply_filters(&cube_from(&[sp], 1, 1), &table);
        assert!((f.pixel(0)[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fresh_bank_exports_uniform_rows() {
        let csv = FilterBank::new(12).unwrap().to_csv();
        let t = Table::parse(&csv, "f").unwrap();
        assert_eq!(t.header.len(), 13);
        assert_eq!(t.header[12], "f12");
        assert_eq!(t.rows.len(), N_BANDS);
        for k in 1..=12 {
            for v in t.column(k).unwrap() {
                assert!((v - 1.0 / 31.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn export_import_is_exact() {
        let bank = random_bank(8, 3, 4.0);
        let table = FilterTable::parse_csv(&bank.to_csv()).unwrap();
        assert_eq!(table, bank.effective());
        let mut rng = seeded(4);
        let spectra: Vec<[f64; N_BANDS]> = (0..12)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
            .collect();
        let h = cube_from(&spectra, 3, 4);
        assert_eq!(apply_filters(&h, &table), bank.apply(&h));
        for k in 0..8 {
            let s: f64 = table.filter(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn import_rejects_bad_tables() {
        let good = FilterBank::new(2).unwrap().to_csv();
        assert!(FilterTable::parse_csv(&good.replace("f2", "g2")).is_err());
        let bad_sum = good.replacen(",0.03225806451612903,", ",0.5,", 1);
        assert!(FilterTable::parse_csv(&bad_sum).unwrap_err().to_string().contains("f1"));
        assert!(FilterTable::parse_csv("wavelength\n400\n").is_err());
        assert!(FilterBank::from_logits(2, vec![0.0; 5]).is_err());
        assert!(FilterBank::new(0).is_err());
    }

    #[test]
    fn graph_matches_plain_and_finite_differences() {
        let n = 4;
        let bank = random_bank(n, 9, 2.0);
        let mut rng = seeded(10);
        let spectra: Vec<[f64; N_BANDS]> = (0..6)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
            .collect();
        let h = cube_from(&spectra, 2, 3);
        let flat: Vec<f64> = spectra.iter().flatten().copied().collect();
        let plain = bank.apply(&h);

        let mut t = Tape::new();
        let l = t.leaf(bank.logits().to_vec());
        let s = t.constant(flat.clone());
        let f = filters_graph(&mut t, l, n, s, 6);
        for (a, b) in t.value(f).iter().zip(&plain.data) {
            assert!((a - b).abs() < 1e-14);
        }
        // weighted sum of features as a scalar objective
        let probe: Vec<f64> = (0..6 * n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let weighted = t.mul_const(f, Arc::new(probe.clone()));
        let total = t.sum(weighted);
        let g = t.backward(total);
        let grad = g.get(l).unwrap();

        let objective = |logits: &[f64]| {
            let fm = FilterBank::from_logits(n, logits.to_vec()).unwrap().apply(&h);
            fm.data.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let step = 1e-6;
        for i in 0..n * N_BANDS {
            let mut p = bank.logits().to_vec();
            let mut m = p.clone();
            p[i] += step;
            m[i] -= step;
            let numeric = (objective(&p) - objective(&m)) / (2.0 * step);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel < 1e-5, "logit {i}: {numeric} vs {}", grad[i]);
        }
    }

    proptest! {
        #[test]
        fn features_are_convex_combinations(seed in 0u64..500, shift in -5.0f64..5.0) {
            let bank = random_bank(5, seed, 6.0);
            let mut rng = seeded(seed + 1);
            let spectra: Vec<[f64; N_BANDS]> = (0..4)
                .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..2.0)))
                .collect();
            let h = cube_from(&spectra, 2, 2);
            let f = bank.apply(&h);
            for (p, s) in spectra.iter().enumerate() {
                let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for v in f.pixel(p) {
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
            // shifting every logit of one filter leaves the output unchanged
            let mut logits = bank.logits().to_vec();
            logits[2 * N_BANDS..3 * N_BANDS].iter_mut().for_each(|l| *l += shift);
            let shifted = FilterBank::from_logits(5, logits).unwrap().apply(&h);
            for (a, b) in shifted.data.iter().zip(&f.data) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn features_are_linear_in_the_cube(seed in 0u64..500, a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let bank = random_bank(3, seed, 3.0);
            let mut rng = seeded(seed + 7);
            let x: [f64; N_BANDS] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let y: [f64; N_BANDS] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let z: [f64; N_BANDS] = std::array::from_fn(|i| a * x[i] + b * y[i]);
            let fx = bank.apply(&cube_from(&[x], 1, 1));
            let fy = bank.apply(&cube_from(&[y], 1, 1));
            let fz = bank.apply(&cube_from(&[z], 1, 1));
            for k in 0..3 {
                prop_assert!((fz.data[k] - (a * fx.data[k] + b * fy.data[k])).abs() < 1e-12);
            }
        }
    }
}
