//! Spectral recovery `S(x)`: a per-pixel perceptron over 3×3 RGB
//! neighbourhoods with a softplus output, plus an auxiliary head that
//! predicts response-curve displacements and camera scalar adjustments from
//! pooled hidden features.
//!
//! A [`RecoveryModel`] also carries the trainable camera state of the two
//! datasets (`cam_s.*` for the paired spectral data, `cam_m.*` for the
//! material images) and the domain discriminator, so one checkpoint holds
//! everything training touches.

mod objective;
mod train;

pub use objective::{loss_total, Batch, BatchItem, LossBreakdown, LossWeights};
pub use train::{
    evaluate, finite_difference_check, grad_check, train, train_model, GradCheckReport, LrSchedule, SpectralPair,
    TrainConfig, TrainData, TrainOutcome, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP,
};

use crate::autodiff::{Tape, Var};
use crate::camera::{camera_forward, CameraMode, CameraParams};
use crate::error::{Error, Result};
use crate::metrics::{mrae, mse};
use crate::params::{xavier_uniform, Bound, ParamStore};
use crate::response::{Matrix3, ResponseMatrix};
use crate::rng::{seeded, CounterRng};
use crate::types::{RgbImage, SpectralCube, N_BANDS};
use std::sync::Arc;

/// 3 channels × 3×3 neighbourhood.
pub const PATCH_INPUTS: usize = 27;
/// Band displacements followed by σ, ν and μ adjustments.
pub const AUX_OUTPUTS: usize = N_BANDS + 3;
pub const DEFAULT_HIDDEN: usize = 64;

/// Noise streams used by the three camera passes of one batch item.
pub const FORK_TRANS: u64 = 1;
pub const FORK_CYCLE: u64 = 2;
pub const FORK_RENDER: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Spectral,
    Material,
}

impl Dataset {
    pub fn prefix(self) -> &'static str {
        match self {
            Dataset::Spectral => "cam_s",
            Dataset::Material => "cam_m",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryModel {
    hidden: usize,
    params: ParamStore,
}

impl RecoveryModel {
    /// Xavier-initialised trunk and discriminator, zero auxiliary layer, and
    /// camera state copied from the given curves and camera settings.
    pub fn init(
        hidden: usize,
        curves_s: &ResponseMatrix,
        curves_m: &ResponseMatrix,
        camera: &CameraParams,
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::param("hidden", "must be at least 1"));
        }
        camera.validate()?;
        if camera.sigma <= 0.0 {
            return Err(Error::param("sigma", "trainable cameras need sigma > 0"));
        }
        let mut rng = seeded(seed);
        let mut p = ParamStore::new();
        p.insert("trunk.w1", xavier_uniform(&mut rng, PATCH_INPUTS, hidden));
        p.insert("trunk.b1", vec![0.0; hidden]);
        p.insert("trunk.w2", xavier_uniform(&mut rng, hidden, hidden));
        p.insert("trunk.b2", vec![0.0; hidden]);
        p.insert("trunk.w3", xavier_uniform(&mut rng, hidden, N_BANDS));
        p.insert("trunk.b3", vec![0.0; N_BANDS]);
        p.insert("aux.w", vec![0.0; hidden * AUX_OUTPUTS]);
        p.insert("aux.b", vec![0.0; AUX_OUTPUTS]);
        p.insert("disc.w", xavier_uniform(&mut rng, hidden, 1));
        p.insert("disc.b", vec![0.0]);
        for (ds, curves) in [(Dataset::Spectral, curves_s), (Dataset::Material, curves_m)] {
            let pre = ds.prefix();
            p.insert(format!("{pre}.base"), curves.base().iter().flatten().copied().collect());
            p.insert(format!("{pre}.displacement"), curves.displacement().to_vec());
            p.insert(format!("{pre}.log_sigma"), vec![camera.sigma.ln()]);
            p.insert(format!("{pre}.log_nu"), vec![camera.nu.ln()]);
            p.insert(format!("{pre}.log_mu"), vec![camera.mu.ln()]);
        }
        Self::from_params(p)
    }

    /// Validates slice names and sizes; the hidden width is read from
    /// `trunk.b1`.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let hidden = params.get("trunk.b1")?.len();
        if hidden == 0 {
            return Err(Error::format("trunk.b1", "hidden width is zero"));
        }
        for (name, len) in Self::layout(hidden) {
            params.expect(&name, len)?;
        }
        for ds in [Dataset::Spectral, Dataset::Material] {
            let base = params.get(&format!("{}.base", ds.prefix()))?;
            if base.iter().any(|v| *v < 0.0) {
                return Err(Error::format(format!("{}.base", ds.prefix()), "negative sensitivity"));
            }
        }
        Ok(Self { hidden, params })
    }

    fn layout(hidden: usize) -> Vec<(String, usize)> {
        let mut v = vec![
            ("trunk.w1".to_string(), PATCH_INPUTS * hidden),
            ("trunk.b1".to_string(), hidden),
            ("trunk.w2".to_string(), hidden * hidden),
            ("trunk.b2".to_string(), hidden),
            ("trunk.w3".to_string(), hidden * N_BANDS),
            ("trunk.b3".to_string(), N_BANDS),
            ("aux.w".to_string(), hidden * AUX_OUTPUTS),
            ("aux.b".to_string(), AUX_OUTPUTS),
            ("disc.w".to_string(), hidden),
            ("disc.b".to_string(), 1),
        ];
        for ds in [Dataset::Spectral, Dataset::Material] {
            let pre = ds.prefix();
            v.push((format!("{pre}.base"), 3 * N_BANDS));
            v.push((format!("{pre}.displacement"), N_BANDS));
            v.push((format!("{pre}.log_sigma"), 1));
            v.push((format!("{pre}.log_nu"), 1));
            v.push((format!("{pre}.log_mu"), 1));
        }
        v
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access; callers must keep slice sizes unchanged.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Sets every trunk and auxiliary value to zero.
    pub fn zero_network(&mut self) {
        let names: Vec<String> = self
            .params
            .names()
            .into_iter()
            .filter(|n| n.starts_with("trunk.") || n.starts_with("aux."))
            .map(str::to_string)
            .collect();
        for n in names {
            let v = self.params.get_mut(&n).expect("listed above");
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Fixed standard curves are not trained.
    pub fn is_trainable(name: &str) -> bool {
        !name.ends_with(".base")
    }

    pub fn base_curves(&self, ds: Dataset) -> Matrix3 {
        let flat = self
            .params
            .get(&format!("{}.base", ds.prefix()))
            .expect("validated at construction");
        std::array::from_fn(|c| std::array::from_fn(|b| flat[c * N_BANDS + b]))
    }

    pub(crate) fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape, Self::is_trainable)
    }

    /// Camera actually applied to `x`'s dataset after the auxiliary head's
    /// adjustments, in differentiable mode with normalisation.
    pub fn effective_camera(&self, ds: Dataset, x: &RgbImage, jpeg_quality: u8) -> Result<(ResponseMatrix, CameraParams)> {
        let aux = self.aux_output(x)?;
        let pre = ds.prefix();
        let disp = self.params.get(&format!("{pre}.displacement"))?;
        let displacement: [f64; N_BANDS] = std::array::from_fn(|b| disp[b] + aux[b]);
        let scalar = |name: &str| -> Result<f64> { Ok(self.params.get(&format!("{pre}.{name}"))?[0]) };
        let rm = ResponseMatrix::new(self.base_curves(ds), displacement)?;
        let p = CameraParams {
            sigma: (scalar("log_sigma")? + aux[N_BANDS]).exp(),
            nu: (scalar("log_nu")? + aux[N_BANDS + 1]).exp(),
            mu: (scalar("log_mu")? + aux[N_BANDS + 2]).exp(),
            jpeg_quality,
            mode: CameraMode::Differentiable,
            normalize: true,
        };
        p.validate()?;
        Ok((rm, p))
    }

    /// The 34 auxiliary outputs for image `x`.
    pub fn aux_output(&self, x: &RgbImage) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, |_| false);
        let xv = tape.constant(x.data().to_vec());
        let out = trunk_graph(&mut tape, &b, self.hidden, xv, x.height(), x.width());
        Ok(tape.value(out.aux).to_vec())
    }

    /// Pooled last-hidden-layer features for image `x`.
    pub fn pooled_features(&self, x: &RgbImage) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, |_| false);
        let xv = tape.constant(x.data().to_vec());
        let out = trunk_graph(&mut tape, &b, self.hidden, xv, x.height(), x.width());
        tape.value(out.pooled).to_vec()
    }
}

/// Output handles of the trunk on one image.
pub(crate) struct TrunkOut {
    /// Band-major `[31, pixels]`.
    pub cube: Var,
    /// `[hidden]`.
    pub pooled: Var,
    /// `[34]`.
    pub aux: Var,
}

/// `[pixels, 27]` patch matrix gathered from a channel-major image with
/// edge replication.
pub(crate) fn patch_index(height: usize, width: usize) -> Vec<usize> {
    let plane = height * width;
    let mut idx = Vec::with_capacity(plane * PATCH_INPUTS);
    for r in 0..height {
        for c in 0..width {
            for ch in 0..3 {
                for dy in 0..3 {
                    let rr = (r + dy).saturating_sub(1).min(height - 1);
                    for dx in 0..3 {
                        let cc = (c + dx).saturating_sub(1).min(width - 1);
                        idx.push(ch * plane + rr * width + cc);
                    }
                }
            }
        }
    }
    idx
}

/// Pixel-major `[pixels, 31]` to band-major `[31, pixels]`.
fn band_major_index(pixels: usize) -> Vec<usize> {
    (0..N_BANDS)
        .flat_map(|b| (0..pixels).map(move |p| p * N_BANDS + b))
        .collect()
}

pub(crate) fn trunk_graph(tape: &mut Tape, b: &Bound, hidden: usize, x: Var, height: usize, width: usize) -> TrunkOut {
    let pixels = height * width;
    let patches = tape.gather(x, Arc::new(patch_index(height, width)));
    let z1 = tape.matmul(patches, b.var("trunk.w1"), pixels, PATCH_INPUTS, hidden);
    let z1 = tape.add_bias(z1, b.var("trunk.b1"), hidden);
    let a1 = tape.relu(z1);
    let z2 = tape.matmul(a1, b.var("trunk.w2"), pixels, hidden, hidden);
    let z2 = tape.add_bias(z2, b.var("trunk.b2"), hidden);
    let a2 = tape.relu(z2);
    let z3 = tape.matmul(a2, b.var("trunk.w3"), pixels, hidden, N_BANDS);
    let z3 = tape.add_bias(z3, b.var("trunk.b3"), N_BANDS);
    let spectra = tape.softplus(z3);
    let cube = tape.gather(spectra, Arc::new(band_major_index(pixels)));
    let pooled = tape.col_mean(a2, pixels, hidden);
    let aux = tape.matmul(pooled, b.var("aux.w"), 1, hidden, AUX_OUTPUTS);
    let aux = tape.add_bias(aux, b.var("aux.b"), AUX_OUTPUTS);
    TrunkOut { cube, pooled, aux }
}

/// `S(x)`: a non-negative 31-band cube of the same size as `x`.
pub fn recover(model: &RecoveryModel, x: &RgbImage) -> SpectralCube {
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape, |_| false);
    let xv = tape.constant(x.data().to_vec());
    let out = trunk_graph(&mut tape, &b, model.hidden, xv, x.height(), x.width());
    SpectralCube::new(x.height(), x.width(), tape.value(out.cube).to_vec())
        .expect("softplus output is finite and non-negative")
}

/// `mse(x, R(S(x)))`.
pub fn loss_trans(x_m: &RgbImage, model: &RecoveryModel, rm: &ResponseMatrix, p: &CameraParams, rng: &CounterRng) -> Result<f64> {
    let h = recover(model, x_m);
    let y = camera_forward(&h, rm, p, rng)?;
    mse(x_m, &y)
}

/// The three RGB reconstruction terms, kept separate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgbTerms {
    /// `mse(x_m, R_m(S(x_m)))`.
    pub trans: f64,
    /// `mse(x_s, R_s(S(x_s)))`.
    pub cycle: f64,
    /// `mse(x_s, R_s(h_s))`.
    pub render: f64,
}

impl RgbTerms {
    pub fn sum(&self) -> f64 {
        self.trans + self.cycle + self.render
    }
}

/// RGB recovery loss over one spectral pair and one material image. Each
/// camera pass draws its noise from its own fork of `rng`.
#[allow(clippy::too_many_arguments)]
pub fn loss_rgb(
    x_s: &RgbImage,
    h_s: &SpectralCube,
    x_m: &RgbImage,
    model: &RecoveryModel,
    rm_s: &ResponseMatrix,
    rm_m: &ResponseMatrix,
    p_s: &CameraParams,
    p_m: &CameraParams,
    rng: &CounterRng,
) -> Result<RgbTerms> {
    let trans = loss_trans(x_m, model, rm_m, p_m, &rng.fork(FORK_TRANS))?;
    let cycle = mse(x_s, &camera_forward(&recover(model, x_s), rm_s, p_s, &rng.fork(FORK_CYCLE))?)?;
    let render = mse(x_s, &camera_forward(h_s, rm_s, p_s, &rng.fork(FORK_RENDER))?)?;
    Ok(RgbTerms { trans, cycle, render })
}

/// `mrae(h, S(x)) + mrae(h, S(R(h)))`, the second camera pass sharing the
/// render stream of [`loss_rgb`].
pub fn loss_spectral(
    h_s: &SpectralCube,
    x_s: &RgbImage,
    model: &RecoveryModel,
    rm_s: &ResponseMatrix,
    p: &CameraParams,
    rng: &CounterRng,
    epsilon: f64,
) -> Result<f64> {
    let direct = mrae(h_s, &recover(model, x_s), epsilon)?;
    let rendered = camera_forward(h_s, rm_s, p, &rng.fork(FORK_RENDER))?;
    let cycled = mrae(h_s, &recover(model, &rendered), epsilon)?;
    Ok(direct + cycled)
}

#[cfg(test)]
mod tests;
