//! The weighted training objective recorded on a tape.

use super::{trunk_graph, Dataset, RecoveryModel, TrainConfig, FORK_CYCLE, FORK_RENDER, FORK_TRANS};
use crate::autodiff::{Tape, Var};
use crate::camera::graph::{self as cam_graph, CameraVars};
use crate::domain::domain_loss_graph;
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::response::Matrix3;
use crate::rng::CounterRng;
use crate::types::{RgbImage, SpectralCube, N_BANDS};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub band: f64,
    pub rgb: f64,
    pub spectral: f64,
    pub domain: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            band: 10.0,
            rgb: 5.0,
            spectral: 5.0,
            domain: 0.5,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, band: f64, rgb: f64, spectral: f64, domain: f64) -> f64 {
        self.band * band + self.rgb * rgb + self.spectral * spectral + self.domain * domain
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_band", self.band),
            ("w_rgb", self.rgb),
            ("w_spectral", self.spectral),
            ("w_domain", self.domain),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::param(name, format!("{w} (must be finite and >= 0)")));
            }
        }
        Ok(())
    }
}

/// One spectral pair plus one material image.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub x_s: &'a RgbImage,
    pub h_s: &'a SpectralCube,
    pub x_m: &'a RgbImage,
}

pub type Batch<'a> = [BatchItem<'a>];

/// Unweighted terms (batch means) and the weighted total. `trans` is the
/// material reconstruction error, already included in `rgb`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub band: f64,
    pub rgb: f64,
    pub spectral: f64,
    pub domain: f64,
    pub trans: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("band", self.band),
            ("rgb", self.rgb),
            ("spectral", self.spectral),
            ("domain", self.domain),
            ("trans", self.trans),
        ]
    }
}

/// How the domain term's gradient reaches the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DomainGradient {
    /// Negated at the junction, as in training.
    Adversarial,
    /// The exact gradient of the objective, for finite-difference checks.
    Exact,
}

pub(crate) struct ObjectiveGraph {
    pub tape: Tape,
    pub bound: Bound,
    pub total: Var,
    pub breakdown: LossBreakdown,
}

struct ItemVars {
    band: Var,
    rgb: Var,
    spectral: Var,
    domain: Var,
    trans: Var,
}

fn mse_graph(tape: &mut Tape, est: Var, truth: Var) -> Var {
    let d = tape.sub(est, truth);
    let sq = tape.mul(d, d);
    tape.mean(sq)
}

fn mrae_graph(tape: &mut Tape, est: Var, truth: &[f64], epsilon: f64) -> Var {
    let t = tape.constant(truth.to_vec());
    let inv: Vec<f64> = truth.iter().map(|t| 1.0 / t.max(epsilon)).collect();
    let d = tape.sub(est, t);
    let a = tape.abs(d);
    let r = tape.mul_const(a, Arc::new(inv));
    tape.mean(r)
}

fn band_graph(tape: &mut Tape, displacement: Var, base: &Matrix3) -> Var {
    let weights: Vec<f64> = (0..N_BANDS).map(|b| base.iter().map(|row| row[b]).sum()).collect();
    let a = tape.abs(displacement);
    let w = tape.mul_const(a, Arc::new(weights));
    tape.sum(w)
}

fn effective_camera(tape: &mut Tape, b: &Bound, ds: Dataset, aux: Var) -> CameraVars {
    let pre = ds.prefix();
    let offset = tape.gather(aux, Arc::new((0..N_BANDS).collect()));
    let displacement = tape.add(b.var(&format!("{pre}.displacement")), offset);
    let mut adjusted = |name: &str, slot: usize| {
        let a = tape.gather(aux, Arc::new(vec![N_BANDS + slot]));
        let s = tape.add(b.var(&format!("{pre}.{name}")), a);
        tape.exp(s)
    };
    let sigma = adjusted("log_sigma", 0);
    let nu = adjusted("log_nu", 1);
    CameraVars {
        displacement,
        sigma,
        nu,
        mu: None,
    }
}

fn item_graph(
    tape: &mut Tape,
    b: &Bound,
    model: &RecoveryModel,
    item: &BatchItem,
    cfg: &TrainConfig,
    rng: &CounterRng,
    domain_grad: DomainGradient,
) -> Result<ItemVars> {
    let (x_s, h_s, x_m) = (item.x_s, item.h_s, item.x_m);
    if (x_s.height(), x_s.width()) != (h_s.height(), h_s.width()) {
        return Err(Error::Shape(format!(
            "spectral pair sizes differ: rgb {}x{}, cube {}x{}",
            x_s.height(),
            x_s.width(),
            h_s.height(),
            h_s.width()
        )));
    }
    let hidden = model.hidden();
    let quality = cfg.camera.jpeg_quality;
    let base_s = model.base_curves(Dataset::Spectral);
    let base_m = model.base_curves(Dataset::Material);
    let (hs, ws) = (x_s.height(), x_s.width());
    let (hm, wm) = (x_m.height(), x_m.width());

    let xs = tape.constant(x_s.data().to_vec());
    let xm = tape.constant(x_m.data().to_vec());
    let hv = tape.constant(h_s.data().to_vec());

    let fs = trunk_graph(tape, b, hidden, xs, hs, ws);
    let fm = trunk_graph(tape, b, hidden, xm, hm, wm);
    let cam_s = effective_camera(tape, b, Dataset::Spectral, fs.aux);
    let cam_m = effective_camera(tape, b, Dataset::Material, fm.aux);

    let trans_img = cam_graph::camera(tape, fm.cube, hm, wm, &base_m, &cam_m, quality, true, &rng.fork(FORK_TRANS))?;
    let trans = mse_graph(tape, trans_img, xm);
    let cycle_img = cam_graph::camera(tape, fs.cube, hs, ws, &base_s, &cam_s, quality, true, &rng.fork(FORK_CYCLE))?;
    let cycle = mse_graph(tape, cycle_img, xs);
    let render_img = cam_graph::camera(tape, hv, hs, ws, &base_s, &cam_s, quality, true, &rng.fork(FORK_RENDER))?;
    let render = mse_graph(tape, render_img, xs);
    let rgb = tape.add(trans, cycle);
    let rgb = tape.add(rgb, render);

    let fc = trunk_graph(tape, b, hidden, render_img, hs, ws);
    let direct = mrae_graph(tape, fs.cube, h_s.data(), cfg.mrae_epsilon);
    let cycled = mrae_graph(tape, fc.cube, h_s.data(), cfg.mrae_epsilon);
    let spectral = tape.add(direct, cycled);

    let band_s = band_graph(tape, cam_s.displacement, &base_s);
    let band_m = band_graph(tape, cam_m.displacement, &base_m);
    let band = tape.add(band_s, band_m);

    let domain = domain_loss_graph(
        tape,
        fs.pooled,
        fm.pooled,
        b.var("disc.w"),
        b.var("disc.b"),
        domain_grad == DomainGradient::Adversarial,
    );
    Ok(ItemVars {
        band,
        rgb,
        spectral,
        domain,
        trans,
    })
}

fn batch_mean(tape: &mut Tape, vars: &[Var]) -> Var {
    let all = tape.concat(vars);
    tape.mean(all)
}

pub(crate) fn build_objective(
    model: &RecoveryModel,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &CounterRng,
    domain_grad: DomainGradient,
) -> Result<ObjectiveGraph> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch has no items".into()));
    }
    cfg.weights.validate()?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut items = Vec::with_capacity(batch.len());
    for (i, item) in batch.iter().enumerate() {
        items.push(item_graph(&mut tape, &bound, model, item, cfg, &rng.fork(i as u64), domain_grad)?);
    }
    let pick = |f: fn(&ItemVars) -> Var| items.iter().map(f).collect::<Vec<_>>();
    let band = batch_mean(&mut tape, &pick(|v| v.band));
    let rgb = batch_mean(&mut tape, &pick(|v| v.rgb));
    let spectral = batch_mean(&mut tape, &pick(|v| v.spectral));
    let domain = batch_mean(&mut tape, &pick(|v| v.domain));
    let trans = batch_mean(&mut tape, &pick(|v| v.trans));

    let w = cfg.weights;
    let parts = [
        tape.scale(band, w.band),
        tape.scale(rgb, w.rgb),
        tape.scale(spectral, w.spectral),
        tape.scale(domain, w.domain),
    ];
    let mut total = parts[0];
    for p in &parts[1..] {
        total = tape.add(total, *p);
    }

    let breakdown = LossBreakdown {
        band: tape.scalar(band),
        rgb: tape.scalar(rgb),
        spectral: tape.scalar(spectral),
        domain: tape.scalar(domain),
        trans: tape.scalar(trans),
        total: tape.scalar(total),
    };
    for (term, value) in breakdown.terms().into_iter().chain([("total", breakdown.total)]) {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: term.into(),
                value,
            });
        }
    }
    Ok(ObjectiveGraph {
        tape,
        bound,
        total,
        breakdown,
    })
}

/// Weighted objective and its unweighted terms, averaged over the batch.
/// Item `i` draws its noise from `rng.fork(i)`.
pub fn loss_total(batch: &Batch, model: &RecoveryModel, cfg: &TrainConfig, rng: &CounterRng) -> Result<LossBreakdown> {
    Ok(build_objective(model, batch, cfg, rng, DomainGradient::Adversarial)?.breakdown)
}
