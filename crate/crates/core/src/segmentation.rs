//! Material segmentation from filtered spectral features fused with the
//! observations of the matched database entry, plus the accuracy metrics.
//!
//! Every pixel's input is its `n_filters` filter responses followed by
//! (photopic reflectance, specularity, roughness). One ReLU hidden layer
//! maps it to class logits; the prediction is the softmax argmax.

use crate::autodiff::{softmax_into, Tape};
use crate::error::{Error, Result};
use crate::filters::{filters_graph, FilterBank};
use crate::matching::{attach_observations, SpectralDb};
use crate::params::{xavier_uniform, Momentum, ParamStore};
use crate::rng::seeded;
use crate::types::{LabelMap, SpectralCube, N_BANDS};
use rand::Rng;
use rayon::prelude::*;
use std::sync::Arc;

pub const DEFAULT_SEG_HIDDEN: usize = 32;
/// Observation values appended to the filter features.
pub const OBS_INPUTS: usize = 3;

const FILTER_LOGITS: &str = "filters.logits";
const BATCH_STREAM: u64 = 0xBA7C_4E55;

/// Fusion classifier. Slices: `seg.w1 [(n_filters + 3) × hidden]`,
/// `seg.b1 [hidden]`, `seg.w2 [hidden × classes]`, `seg.b2 [classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    n_filters: usize,
    hidden: usize,
    classes: usize,
    params: ParamStore,
}

impl SegModel {
    pub fn init(n_filters: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if n_filters == 0 || hidden == 0 {
            return Err(Error::param("segmentation widths", "n_filters and hidden must be at least 1"));
        }
        if classes == 0 || classes > LabelMap::MAX_CLASSES {
            return Err(Error::param("classes", format!("{classes} (must be in 1..={})", LabelMap::MAX_CLASSES)));
        }
        let inputs = n_filters + OBS_INPUTS;
        let mut rng = seeded(seed);
        let mut params = ParamStore::new();
        params.insert("seg.w1", xavier_uniform(&mut rng, inputs, hidden));
        params.insert("seg.b1", vec![0.0; hidden]);
        params.insert("seg.w2", xavier_uniform(&mut rng, hidden, classes));
        params.insert("seg.b2", vec![0.0; classes]);
        Ok(Self {
            n_filters,
            hidden,
            classes,
            params,
        })
    }

    /// Rebuilds a model from its slices, inferring the widths.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let hidden = params.get("seg.b1")?.len();
        let classes = params.get("seg.b2")?.len();
        let w1 = params.get("seg.w1")?.len();
        if hidden == 0 || classes == 0 || w1 % hidden != 0 || w1 / hidden <= OBS_INPUTS {
            return Err(Error::format("seg.w1", "inconsistent layer widths"));
        }
        let n_filters = w1 / hidden - OBS_INPUTS;
        params.expect("seg.w2", hidden * classes)?;
        Ok(Self {
            n_filters,
            hidden,
            classes,
            params,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn inputs(&self) -> usize {
        self.n_filters + OBS_INPUTS
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zeroes the output layer, so every pixel gets uniform probabilities.
    pub fn zero_output(&mut self) {
        for name in ["seg.w2", "seg.b2"] {
            self.params.get_mut(name).expect("slice created at init").fill(0.0);
        }
    }

    /// Class logits of one fused input vector.
    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let (w1, b1) = (p.get("seg.w1").unwrap(), p.get("seg.b1").unwrap());
        let (w2, b2) = (p.get("seg.w2").unwrap(), p.get("seg.b2").unwrap());
        let mut hidden = b1.to_vec();
        for (i, x) in input.iter().enumerate() {
            for (h, w) in hidden.iter_mut().zip(&w1[i * self.hidden..(i + 1) * self.hidden]) {
                *h += x * w;
            }
        }
        let mut out = b2.to_vec();
        for (j, h) in hidden.iter().enumerate() {
            let a = h.max(0.0);
            for (o, w) in out.iter_mut().zip(&w2[j * self.classes..(j + 1) * self.classes]) {
                *o += a * w;
            }
        }
        out
    }

    /// Filter logits and classifier slices in one store, for checkpoints.
    pub fn bundle(&self, fb: &FilterBank) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert(FILTER_LOGITS, fb.logits().to_vec());
        for (name, v) in self.params.iter() {
            store.insert(name, v.to_vec());
        }
        store
    }

    pub fn unbundle(store: &ParamStore) -> Result<(SegModel, FilterBank)> {
        let logits = store.get(FILTER_LOGITS)?;
        if logits.len() % N_BANDS != 0 {
            return Err(Error::format(FILTER_LOGITS, "length is not a multiple of 31"));
        }
        let fb = FilterBank::from_logits(logits.len() / N_BANDS, logits.to_vec())?;
        let mut params = ParamStore::new();
        for name in ["seg.w1", "seg.b1", "seg.w2", "seg.b2"] {
            params.insert(name, store.get(name)?.to_vec());
        }
        let model = SegModel::from_params(params)?;
        if model.n_filters != fb.n_filters() {
            return Err(Error::Shape(format!(
                "classifier expects {} filters, bank has {}",
                model.n_filters,
                fb.n_filters()
            )));
        }
        Ok((model, fb))
    }
}

/// Fused per-pixel inputs, pixel-major `[pixels × (n_filters + 3)]`.
pub fn fused_inputs(h: &SpectralCube, fb: &FilterBank, db: &SpectralDb) -> Result<Vec<f64>> {
    let features = fb.apply(h);
    let obs = attach_observations(h, db)?;
    let n = fb.n_filters();
    let mut out = Vec::with_capacity(h.pixels() * (n + OBS_INPUTS));
    for (p, o) in obs.pixels.iter().enumerate() {
        out.extend_from_slice(features.pixel(p));
        out.extend_from_slice(&o.values());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: LabelMap,
    /// Pixel-major `[pixels × classes]`.
    pub probabilities: Vec<f64>,
    pub classes: usize,
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn segment(h: &SpectralCube, fb: &FilterBank, db: &SpectralDb, model: &SegModel) -> Result<Segmentation> {
    if fb.n_filters() != model.n_filters {
        return Err(Error::Shape(format!(
            "classifier expects {} filters, bank has {}",
            model.n_filters,
            fb.n_filters()
        )));
    }
    let inputs = fused_inputs(h, fb, db)?;
    let c = model.classes;
    let mut probabilities = vec![0.0; h.pixels() * c];
    let labels: Vec<u8> = probabilities
        .par_chunks_mut(c)
        .zip(inputs.par_chunks(model.inputs()))
        .map(|(prob, x)| {
            let z = model.logits(x);
            softmax_into(&z, prob);
            argmax(&z) as u8
        })
        .collect();
    Ok(Segmentation {
        labels: LabelMap::new(h.height(), h.width(), labels)?,
        probabilities,
        classes: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegTrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    /// Labeled pixels drawn (with replacement) per step; `None` uses every
    /// labeled pixel in a fixed order.
    pub batch_pixels: Option<usize>,
    pub hidden: usize,
    pub seed: u64,
    /// Train only `seg.w2` and `seg.b2`, which makes the loss convex.
    pub final_layer_only: bool,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            steps: 2000,
            batch_pixels: Some(512),
            hidden: DEFAULT_SEG_HIDDEN,
            seed: 0,
            final_layer_only: false,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::param("seg_lr", format!("{} (must be finite and >= 0)", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("seg_momentum", format!("{} (must be in [0, 1))", self.momentum)));
        }
        if self.batch_pixels == Some(0) {
            return Err(Error::param("seg_batch", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::param("seg_hidden", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SegOutcome {
    pub model: SegModel,
    pub filters: FilterBank,
    /// Cross-entropy of every step, before that step's update.
    pub trace: Vec<f64>,
}

/// Labeled pixels of the training set, pixel-major.
struct LabeledPixels {
    spectra: Vec<f64>,
    obs: Vec<f64>,
    labels: Vec<usize>,
}

fn labeled_pixels(samples: &[(SpectralCube, LabelMap)], db: &SpectralDb, classes: usize) -> Result<LabeledPixels> {
    let mut out = LabeledPixels {
        spectra: Vec::new(),
        obs: Vec::new(),
        labels: Vec::new(),
    };
    for (i, (cube, labels)) in samples.iter().enumerate() {
        if (cube.height(), cube.width()) != (labels.height(), labels.width()) {
            return Err(Error::Shape(format!("sample {i}: cube and label map sizes differ")));
        }
        labels.check_classes(classes)?;
        let obs = attach_observations(cube, db)?;
        for (p, &l) in labels.labels().iter().enumerate() {
            if LabelMap::is_labeled(l) {
                out.spectra.extend_from_slice(&cube.spectrum_at(p));
                out.obs.extend_from_slice(&obs.pixels[p].values());
                out.labels.push(l as usize);
            }
        }
    }
    if out.labels.is_empty() {
        return Err(Error::Empty("no labeled pixels to train on".into()));
    }
    Ok(out)
}

/// Class count for a training set: enough for every database label and
/// every ground-truth label.
pub fn class_count(samples: &[(SpectralCube, LabelMap)], db: &SpectralDb) -> usize {
    let from_labels = samples
        .iter()
        .flat_map(|(_, l)| l.labels().iter())
        .filter(|l| LabelMap::is_labeled(**l))
        .map(|l| *l as usize + 1)
        .max()
        .unwrap_or(0);
    from_labels.max(db.classes())
}

/// Mean cross-entropy of labeled pixels, recorded on a tape, for the
/// parameters in `store` (filter logits plus classifier slices).
fn ce_graph(
    store: &ParamStore,
    model: &SegModel,
    data: &LabeledPixels,
    batch: &[usize],
    trainable: impl Fn(&str) -> bool,
) -> (Tape, crate::params::Bound, crate::autodiff::Var) {
    let (n, hid, c) = (model.n_filters, model.hidden, model.classes);
    let b = batch.len();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, trainable);
    let spectra: Vec<f64> = batch
        .iter()
        .flat_map(|&i| data.spectra[i * N_BANDS..(i + 1) * N_BANDS].iter().copied())
        .collect();
    let obs: Vec<f64> = batch
        .iter()
        .flat_map(|&i| data.obs[i * OBS_INPUTS..(i + 1) * OBS_INPUTS].iter().copied())
        .collect();
    let spectra = tape.constant(spectra);
    let obs = tape.constant(obs);
    let feats = filters_graph(&mut tape, bound.var(FILTER_LOGITS), n, spectra, b);

    let w1 = bound.var("seg.w1");
    let w1f = tape.gather(w1, Arc::new((0..n * hid).collect()));
    let w1o = tape.gather(w1, Arc::new((n * hid..(n + OBS_INPUTS) * hid).collect()));
    let zf = tape.matmul(feats, w1f, b, n, hid);
    let zo = tape.matmul(obs, w1o, b, OBS_INPUTS, hid);
    let z1 = tape.add(zf, zo);
    let z1 = tape.add_bias(z1, bound.var("seg.b1"), hid);
    let a1 = tape.relu(z1);
    let z2 = tape.matmul(a1, bound.var("seg.w2"), b, hid, c);
    let z2 = tape.add_bias(z2, bound.var("seg.b2"), c);
    let ls = tape.log_softmax_rows(z2, c);
    let picks: Vec<usize> = batch.iter().enumerate().map(|(r, &i)| r * c + data.labels[i]).collect();
    let picked = tape.gather(ls, Arc::new(picks));
    let mean = tape.mean(picked);
    let loss = tape.scale(mean, -1.0);
    (tape, bound, loss)
}

/// Trains a fresh classifier (seeded from `cfg.seed`) jointly with the
/// filter logits on the labeled pixels of `samples`.
pub fn train_seg(
    samples: &[(SpectralCube, LabelMap)],
    fb: &FilterBank,
    db: &SpectralDb,
    cfg: &SegTrainConfig,
) -> Result<SegOutcome> {
    cfg.validate()?;
    let classes = class_count(samples, db);
    let model = SegModel::init(fb.n_filters(), cfg.hidden, classes.max(1), cfg.seed)?;
    train_seg_model(model, fb, samples, db, cfg)
}

/// Continues training `model` and `fb`.
pub fn train_seg_model(
    model: SegModel,
    fb: &FilterBank,
    samples: &[(SpectralCube, LabelMap)],
    db: &SpectralDb,
    cfg: &SegTrainConfig,
) -> Result<SegOutcome> {
    cfg.validate()?;
    if model.n_filters != fb.n_filters() {
        return Err(Error::Shape(format!(
            "classifier expects {} filters, bank has {}",
            model.n_filters,
            fb.n_filters()
        )));
    }
    let data = labeled_pixels(samples, db, model.classes)?;
    let total = data.labels.len();
    let mut store = model.bundle(fb);
    let trainable = |name: &str| !cfg.final_layer_only || name == "seg.w2" || name == "seg.b2";
    let mut opt = Momentum::new(cfg.lr, cfg.momentum);
    let mut rng = seeded(cfg.seed ^ BATCH_STREAM);
    let all: Vec<usize> = (0..total).collect();
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<usize> = match cfg.batch_pixels {
            Some(k) => (0..k).map(|_| rng.gen_range(0..total)).collect(),
            None => all.clone(),
        };
        let (tape, bound, loss) = ce_graph(&store, &model, &data, &batch, trainable);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: format!("segmentation cross-entropy at step {step}"),
                value,
            });
        }
        trace.push(value);
        let grads = tape.backward(loss);
        let all_grads = bound.gradients(&store, &grads);
        let mut g = ParamStore::new();
        for (name, v) in all_grads.iter() {
            if trainable(name) {
                g.insert(name, v.to_vec());
            }
        }
        opt.step(&mut store, &g)?;
    }
    let (model, filters) = SegModel::unbundle(&store)?;
    Ok(SegOutcome { model, filters, trace })
}

fn check_pair(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if !gt.labels().iter().any(|l| LabelMap::is_labeled(*l)) {
        return Err(Error::Empty("ground truth has no labeled pixels".into()));
    }
    Ok(())
}

/// Fraction of labeled ground-truth pixels predicted correctly.
pub fn pixel_acc(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, g) in pred.labels().iter().zip(gt.labels()) {
        if LabelMap::is_labeled(*g) {
            n += 1;
            hit += (p == g) as usize;
        }
    }
    Ok(hit as f64 / n as f64)
}

/// Mean per-class recall over the classes present in the ground truth.
pub fn mean_acc(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    gt.check_classes(classes)?;
    let mut hit = vec![0usize; classes];
    let mut n = vec![0usize; classes];
    for (p, g) in pred.labels().iter().zip(gt.labels()) {
        if LabelMap::is_labeled(*g) {
            n[*g as usize] += 1;
            hit[*g as usize] += (p == g) as usize;
        }
    }
    let present: Vec<f64> = (0..classes)
        .filter(|&c| n[c] > 0)
        .map(|c| hit[c] as f64 / n[c] as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
