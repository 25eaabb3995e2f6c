//! Joint training of the recovery network and both cameras, evaluation,
//! and the finite-difference gradient check.

use super::objective::{build_objective, DomainGradient};
use super::{BatchItem, LossBreakdown, LossWeights, RecoveryModel, DEFAULT_HIDDEN};
use crate::camera::CameraParams;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_MRAE_EPSILON;
use crate::params::{Momentum, ParamStore};
use crate::response::ResponseMatrix;
use crate::rng::{seeded, CounterRng};
use crate::types::{RgbImage, SpectralCube};
use rand::seq::SliceRandom;
use rand::Rng;

/// Central-difference step of [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Gradients smaller than this, or than this times the loss value, are
/// compared in absolute terms. Central differences of a loss `f` carry
/// roundoff near `ε·|f|/step`, so smaller gradients cannot be resolved.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

const SELECTION_STREAM: u64 = 0x5E1E_C7ED;
const EVAL_STREAM: u64 = 0xE7A1_0A7E;

/// Step-size schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` at step 0 down to zero after the last step.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, lr: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => 0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub steps: usize,
    /// Spectral pairs (and material images) per step.
    pub batch_size: usize,
    pub seed: u64,
    pub mrae_epsilon: f64,
    pub hidden: usize,
    /// Initial σ and ν of both cameras, and the compression quality used in
    /// training. Mode and normalisation are ignored: training always uses
    /// the differentiable, normalised chain.
    pub camera: CameraParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 1e-2,
            schedule: LrSchedule::Constant,
            momentum: 0.9,
            steps: 1000,
            batch_size: 1,
            seed: 0,
            mrae_epsilon: DEFAULT_MRAE_EPSILON,
            hidden: DEFAULT_HIDDEN,
            camera: CameraParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::param("lr", format!("{} (must be finite and >= 0)", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", format!("{} (must be in [0, 1))", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.mrae_epsilon > 0.0) {
            return Err(Error::param("mrae_epsilon", "must be > 0"));
        }
        if self.hidden == 0 {
            return Err(Error::param("hidden", "must be at least 1"));
        }
        self.camera.validate()
    }
}

/// A ground-truth cube and its camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPair {
    pub rgb: RgbImage,
    pub cube: SpectralCube,
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub pairs: Vec<SpectralPair>,
    pub material: Vec<RgbImage>,
}

impl TrainData {
    fn check(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Empty("no spectral pairs".into()));
        }
        if self.material.is_empty() {
            return Err(Error::Empty("no material images".into()));
        }
        Ok(())
    }

    fn item(&self, pair: usize, material: usize) -> BatchItem<'_> {
        let p = &self.pairs[pair];
        BatchItem {
            x_s: &p.rgb,
            h_s: &p.cube,
            x_m: &self.material[material],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last step.
    pub model: RecoveryModel,
    /// Parameters with the lowest material reconstruction loss seen.
    pub best: RecoveryModel,
    /// Step whose pre-update parameters are `best`; `None` without steps.
    pub best_step: Option<usize>,
    /// Loss terms of every step, evaluated before that step's update.
    pub trace: Vec<LossBreakdown>,
}

/// Initialises a model from `cfg.seed` and trains it.
pub fn train(
    data: &TrainData,
    curves_s: &ResponseMatrix,
    curves_m: &ResponseMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = RecoveryModel::init(cfg.hidden, curves_s, curves_m, &cfg.camera, cfg.seed)?;
    train_model(init, data, cfg, |_, _| {})
}

/// Momentum descent on every trainable slice of `model`. `progress` sees
/// each step's losses.
pub fn train_model(
    mut model: RecoveryModel,
    data: &TrainData,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check()?;
    let mut selector = seeded(cfg.seed ^ SELECTION_STREAM);
    let noise = CounterRng::new(cfg.seed);
    let mut opt = Momentum::new(cfg.lr, cfg.momentum);
    let mut best = model.clone();
    let mut best_step = None;
    let mut best_trans = f64::INFINITY;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<BatchItem> = (0..cfg.batch_size)
            .map(|_| {
                let p = selector.gen_range(0..data.pairs.len());
                let m = selector.gen_range(0..data.material.len());
                data.item(p, m)
            })
            .collect();
        let obj = build_objective(&model, &batch, cfg, &noise.fork(step as u64), DomainGradient::Adversarial)?;
        let losses = obj.breakdown;
        progress(step, &losses);
        trace.push(losses);
        if losses.trans < best_trans {
            best_trans = losses.trans;
            best = model.clone();
            best_step = Some(step);
        }
        opt.lr = cfg.schedule.rate(cfg.lr, step, cfg.steps);
        let grads = obj.tape.backward(obj.total);
        let all = obj.bound.gradients(model.params(), &grads);
        let mut trainable = ParamStore::new();
        for (name, g) in all.iter() {
            if !RecoveryModel::is_trainable(name) {
                continue;
            }
            if let Some(v) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: format!("gradient of {name} at step {step}"),
                    value: *v,
                });
            }
            trainable.insert(name, g.to_vec());
        }
        opt.step(model.params_mut(), &trainable)?;
    }
    Ok(TrainOutcome {
        model,
        best,
        best_step,
        trace,
    })
}

/// Mean loss terms over `count` fixed items (pair `i`, material `i`, both
/// modulo dataset size) with fixed noise, for comparing models.
pub fn evaluate(model: &RecoveryModel, data: &TrainData, cfg: &TrainConfig, count: usize) -> Result<LossBreakdown> {
    data.check()?;
    if count == 0 {
        return Err(Error::Empty("evaluation needs at least one item".into()));
    }
    let noise = CounterRng::new(cfg.seed ^ EVAL_STREAM);
    let mut acc = LossBreakdown::default();
    for i in 0..count {
        let item = data.item(i % data.pairs.len(), i % data.material.len());
        let l = build_objective(model, &[item], cfg, &noise.fork(i as u64), DomainGradient::Adversarial)?.breakdown;
        acc.band += l.band;
        acc.rgb += l.rgb;
        acc.spectral += l.spectral;
        acc.domain += l.domain;
        acc.trans += l.trans;
        acc.total += l.total;
    }
    let n = count as f64;
    Ok(LossBreakdown {
        band: acc.band / n,
        rgb: acc.rgb / n,
        spectral: acc.spectral / n,
        domain: acc.domain / n,
        trans: acc.trans / n,
        total: acc.total / n,
    })
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Coordinates actually compared.
    pub checked: usize,
    /// Coordinates skipped because a ±step probe crossed a non-smooth point.
    pub excluded: Vec<String>,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares `grad[i]` with `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every
/// `i` in `indices`. `f` returns the value and a branch signature; a
/// coordinate whose probes change the signature is excluded. Returns the
/// relative error per coordinate (`None` if excluded), measured as
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_difference_check(
    f: impl Fn(&[f64]) -> Result<(f64, u64)>,
    x: &[f64],
    grad: &[f64],
    indices: &[usize],
    step: f64,
    floor: f64,
) -> Result<Vec<Option<f64>>> {
    let (_, sig0) = f(x)?;
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        probe[i] = x[i] + step;
        let (fp, sp) = f(&probe)?;
        probe[i] = x[i] - step;
        let (fm, sm) = f(&probe)?;
        probe[i] = x[i];
        if sp != sig0 || sm != sig0 {
            out.push(None);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        let a = grad[i];
        out.push(Some((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor)));
    }
    Ok(out)
}

/// Gradient check of the full objective on one item with fixed noise.
/// Trainable coordinates are visited in a random order drawn from `seed`
/// until `n_params` of them have been compared; coordinates excluded at a
/// kink do not count. The domain term is differentiated exactly here, not
/// through the reversal junction used in training.
pub fn grad_check(
    model: &RecoveryModel,
    item: &BatchItem,
    cfg: &TrainConfig,
    rng: &CounterRng,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let names: Vec<String> = model
        .params()
        .iter()
        .filter(|(n, _)| RecoveryModel::is_trainable(n))
        .map(|(n, _)| n.to_string())
        .collect();
    let mut slots = Vec::new();
    let mut x = Vec::new();
    for name in &names {
        let v = model.params().get(name)?;
        for i in 0..v.len() {
            slots.push((name.clone(), i));
        }
        x.extend_from_slice(v);
    }
    if n_params > x.len() {
        return Err(Error::param("n_params", format!("{n_params} exceeds {} parameters", x.len())));
    }

    let with_values = |values: &[f64]| -> RecoveryModel {
        let mut m = model.clone();
        let mut off = 0;
        for name in &names {
            let slice = m.params_mut().get_mut(name).expect("name from the same model");
            let n = slice.len();
            slice.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        m
    };

    let obj = build_objective(model, &[*item], cfg, rng, DomainGradient::Exact)?;
    let grads = obj.tape.backward(obj.total);
    let all = obj.bound.gradients(model.params(), &grads);
    let mut analytic = Vec::with_capacity(x.len());
    for name in &names {
        analytic.extend_from_slice(all.get(name)?);
    }

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut seeded(seed));
    let f = |values: &[f64]| -> Result<(f64, u64)> {
        let m = with_values(values);
        let o = build_objective(&m, &[*item], cfg, rng, DomainGradient::Exact)?;
        Ok((o.breakdown.total, o.tape.branch_signature()))
    };

    let mut report = GradCheckReport {
        checked: 0,
        excluded: Vec::new(),
        max_rel_error: 0.0,
        worst: None,
    };
    let floor = GRAD_CHECK_FLOOR * obj.breakdown.total.abs().max(1.0);
    let mut next = 0;
    while report.checked < n_params && next < order.len() {
        let take = (n_params - report.checked).min(order.len() - next);
        let chunk = &order[next..next + take];
        next += take;
        let errors = finite_difference_check(&f, &x, &analytic, chunk, GRAD_CHECK_STEP, floor)?;
        for (&i, e) in chunk.iter().zip(errors) {
            let label = format!("{}[{}]", slots[i].0, slots[i].1);
            match e {
                None => report.excluded.push(label),
                Some(e) => {
                    report.checked += 1;
                    if e > report.max_rel_error || report.worst.is_none() {
                        report.max_rel_error = report.max_rel_error.max(e);
                        report.worst = Some(label);
                    }
                }
            }
        }
    }
    Ok(report)
}
