use super::*;
use crate::autodiff::softplus;
use crate::camera::{project_to_rgb, CameraMode};
use crate::metrics::DEFAULT_MRAE_EPSILON;

fn cube(h: usize, w: usize, seed: u64) -> SpectralCube {
    let r = CounterRng::new(seed);
    SpectralCube::from_fn(h, w, |row, col| {
        std::array::from_fn(|b| 0.08 + 0.3 * r.uniform(((row * w + col) * N_BANDS + b) as u64, 0))
    })
    .unwrap()
}

fn diff_params() -> CameraParams {
    CameraParams {
        mode: CameraMode::Differentiable,
        ..Default::default()
    }
}

fn model(hidden: usize, seed: u64) -> RecoveryModel {
    let rm = ResponseMatrix::standard();
    RecoveryModel::init(hidden, &rm, &rm, &CameraParams::default(), seed).unwrap()
}

fn image_of(h: &SpectralCube, seed: u64) -> RgbImage {
    camera_forward(h, &ResponseMatrix::standard(), &CameraParams::default(), &CounterRng::new(seed)).unwrap()
}

/// Straightforward per-pixel evaluation of the trunk, independent of the tape.
fn reference_recover(m: &RecoveryModel, x: &RgbImage) -> Vec<f64> {
    let p = m.params();
    let hid = m.hidden();
    let (w1, b1) = (p.get("trunk.w1").unwrap(), p.get("trunk.b1").unwrap());
    let (w2, b2) = (p.get("trunk.w2").unwrap(), p.get("trunk.b2").unwrap());
    let (w3, b3) = (p.get("trunk.w3").unwrap(), p.get("trunk.b3").unwrap());
    let (h, w) = (x.height(), x.width());
    let mut out = vec![0.0; N_BANDS * h * w];
    for r in 0..h {
        for c in 0..w {
            let mut input = Vec::new();
            for ch in 0..3 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let rr = (r as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let cc = (c as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        input.push(x.get(ch, rr, cc));
                    }
                }
            }
            let layer = |inp: &[f64], wt: &[f64], bias: &[f64], n_out: usize| -> Vec<f64> {
                (0..n_out)
                    .map(|j| bias[j] + inp.iter().enumerate().map(|(i, v)| v * wt[i * n_out + j]).sum::<f64>())
                    .collect()
            };
            let a1: Vec<f64> = layer(&input, w1, b1, hid).into_iter().map(|v| v.max(0.0)).collect();
            let a2: Vec<f64> = layer(&a1, w2, b2, hid).into_iter().map(|v| v.max(0.0)).collect();
            let o = layer(&a2, w3, b3, N_BANDS);
            for b in 0..N_BANDS {
                out[b * h * w + r * w + c] = softplus(o[b]);
            }
        }
    }
    out
}

#[test]
fn zero_network_outputs_ln2() {
    let mut m = model(8, 1);
    m.zero_network();
    let x = image_of(&cube(5, 6, 1), 2);
    let h = recover(&m, &x);
    assert!(h.data().iter().all(|v| (*v - std::f64::consts::LN_2).abs() < 1e-15));
    assert_eq!(m.aux_output(&x).unwrap(), vec![0.0; AUX_OUTPUTS]);
}

#[test]
fn recover_matches_reference_and_is_deterministic() {
    let m = model(16, 3);
    let x = image_of(&cube(7, 9, 4), 5);
    let a = recover(&m, &x);
    let b = recover(&m, &x);
    assert_eq!(a, b);
    let reference = reference_recover(&m, &x);
    for (u, v) in a.data().iter().zip(&reference) {
        assert!((u - v).abs() < 1e-12);
    }
    assert!(a.data().iter().all(|v| *v >= 0.0));
    assert_eq!((a.height(), a.width()), (7, 9));
}

#[test]
fn input_gradient_matches_differences() {
    let m = model(16, 6);
    let x = image_of(&cube(4, 4, 7), 8);
    let (band, pixel, channel) = (12, 5, 1);
    let mut tape = Tape::new();
    let b = m.params().bind(&mut tape, |_| false);
    let xv = tape.leaf(x.data().to_vec());
    let out = trunk_graph(&mut tape, &b, m.hidden(), xv, 4, 4);
    let pick = tape.gather(out.cube, Arc::new(vec![band * 16 + pixel]));
    let s = tape.sum(pick);
    let g = tape.backward(s).get(xv).unwrap()[channel * 16 + pixel];
    let step = 1e-6;
    let eval = |delta: f64| {
        let mut d = x.data().to_vec();
        d[channel * 16 + pixel] += delta;
        let xi = RgbImage::new(4, 4, d).unwrap();
        recover(&m, &xi).data()[band * 16 + pixel]
    };
    let numeric = (eval(step) - eval(-step)) / (2.0 * step);
    assert!((g - numeric).abs() / g.abs().max(1e-8) < 1e-4, "{g} vs {numeric}");
}

#[test]
fn loss_trans_is_composition_and_nonnegative() {
    let m = model(16, 9);
    let x = image_of(&cube(8, 8, 10), 11);
    let rm = ResponseMatrix::standard();
    let p = diff_params();
    let rng = CounterRng::new(12);
    let l = loss_trans(&x, &m, &rm, &p, &rng).unwrap();
    let y = camera_forward(&recover(&m, &x), &rm, &p, &rng).unwrap();
    let direct: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        / x.data().len() as f64;
    assert!((l - direct).abs() < 1e-15);
    assert!(l >= 0.0);
}

#[test]
fn loss_trans_vanishes_on_engineered_identity() {
    // Constant 0.5 output: zero network gives ln 2 in every band; the curves
    // map that to the linear value whose sRGB code is 0.5, which survives the
    // block transform exactly (DC = -4 code units).
    let mut m = model(4, 1);
    m.zero_network();
    let target = 0.5f64;
    let linear = ((target + 0.055) / 1.055).powf(2.4);
    let weight = linear / (N_BANDS as f64 * std::f64::consts::LN_2);
    let rm = ResponseMatrix::new([[weight; N_BANDS]; 3], [0.0; N_BANDS]).unwrap();
    let p = CameraParams {
        sigma: 0.0,
        nu: 1e12,
        mu: 1.0,
        jpeg_quality: 100,
        mode: CameraMode::Differentiable,
        normalize: false,
    };
    let x = RgbImage::filled(8, 8, target);
    let l = loss_trans(&x, &m, &rm, &p, &CounterRng::new(3)).unwrap();
    assert!(l < 1e-20, "{l}");
}

#[test]
fn loss_rgb_terms_and_constructed_render_identity() {
    let m = model(16, 13);
    let rm_s = ResponseMatrix::standard();
    let mut d = [0.0; N_BANDS];
    d[10] = 0.05;
    let rm_m = rm_s.with_displacement(d).unwrap();
    let p = diff_params();
    let rng = CounterRng::new(14);
    let h_s = cube(8, 8, 15);
    // x_s is exactly the render of h_s on the render stream
    let x_s = camera_forward(&h_s, &rm_s, &p, &rng.fork(FORK_RENDER)).unwrap();
    let x_m = image_of(&cube(8, 8, 16), 17);
    let t = loss_rgb(&x_s, &h_s, &x_m, &m, &rm_s, &rm_m, &p, &p, &rng).unwrap();
    assert_eq!(t.render, 0.0);
    assert!(t.trans >= 0.0 && t.cycle >= 0.0);
    assert!(t.sum() >= t.trans && t.sum() >= t.cycle);

    let trans = loss_trans(&x_m, &m, &rm_m, &p, &rng.fork(FORK_TRANS)).unwrap();
    let cycle = mse(&x_s, &camera_forward(&recover(&m, &x_s), &rm_s, &p, &rng.fork(FORK_CYCLE)).unwrap()).unwrap();
    assert_eq!(t.trans, trans);
    assert_eq!(t.cycle, cycle);
    assert_eq!(t.sum(), trans + cycle);
}

#[test]
fn loss_spectral_is_sum_of_two_mrae_calls() {
    let m = model(16, 18);
    let rm = ResponseMatrix::standard();
    let p = diff_params();
    let rng = CounterRng::new(19);
    let h_s = cube(8, 8, 20);
    let x_s = image_of(&h_s, 21);
    let l = loss_spectral(&h_s, &x_s, &m, &rm, &p, &rng, DEFAULT_MRAE_EPSILON).unwrap();
    let direct = mrae(&h_s, &recover(&m, &x_s), DEFAULT_MRAE_EPSILON).unwrap();
    let rendered = camera_forward(&h_s, &rm, &p, &rng.fork(FORK_RENDER)).unwrap();
    let cycled = mrae(&h_s, &recover(&m, &rendered), DEFAULT_MRAE_EPSILON).unwrap();
    assert_eq!(l, direct + cycled);
    assert!(l >= direct);
}

#[test]
fn weights_combine_as_published() {
    let w = LossWeights::default();
    assert_eq!(w.combine(1.0, 1.0, 1.0, 1.0), 20.5);
    assert_eq!(w.combine(0.0, 0.0, 0.0, 0.0), 0.0);
}

fn small_data(n: usize, size: usize) -> TrainData {
    let pairs = (0..n)
        .map(|i| {
            let c = cube(size, size, 100 + i as u64);
            SpectralPair {
                rgb: image_of(&c, 200 + i as u64),
                cube: c,
            }
        })
        .collect();
    let mut d = [0.0; N_BANDS];
    d[20] = 0.04;
    let rm_m = ResponseMatrix::standard().with_displacement(d).unwrap();
    let material = (0..n)
        .map(|i| {
            camera_forward(&cube(size, size, 300 + i as u64), &rm_m, &CameraParams::default(), &CounterRng::new(i as u64))
                .unwrap()
        })
        .collect();
    TrainData { pairs, material }
}

#[test]
fn loss_total_agrees_with_plain_terms() {
    let data = small_data(1, 8);
    let mut m = model(16, 22);
    // non-zero aux so the effective cameras differ from the stored ones
    for v in m.params_mut().get_mut("aux.w").unwrap().iter_mut().step_by(7) {
        *v = 0.01;
    }
    let cfg = TrainConfig {
        hidden: 16,
        ..Default::default()
    };
    let item = BatchItem {
        x_s: &data.pairs[0].rgb,
        h_s: &data.pairs[0].cube,
        x_m: &data.material[0],
    };
    let rng = CounterRng::new(23);
    let l = loss_total(&[item], &m, &cfg, &rng).unwrap();
    let q = cfg.camera.jpeg_quality;
    let (rm_s, p_s) = m.effective_camera(Dataset::Spectral, item.x_s, q).unwrap();
    let (rm_m, p_m) = m.effective_camera(Dataset::Material, item.x_m, q).unwrap();
    let item_rng = rng.fork(0);
    let rgb = loss_rgb(item.x_s, item.h_s, item.x_m, &m, &rm_s, &rm_m, &p_s, &p_m, &item_rng).unwrap();
    let spectral = loss_spectral(item.h_s, item.x_s, &m, &rm_s, &p_s, &item_rng, cfg.mrae_epsilon).unwrap();
    let band = rm_s.band_loss() + rm_m.band_loss();
    let disc = crate::domain::DomainDiscriminator {
        weights: m.params().get("disc.w").unwrap().to_vec(),
        bias: m.params().get("disc.b").unwrap()[0],
    };
    let domain = crate::domain::domain_loss(&m.pooled_features(item.x_s), &m.pooled_features(item.x_m), &disc).unwrap();

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    assert!(close(l.trans, rgb.trans), "{} {}", l.trans, rgb.trans);
    assert!(close(l.rgb, rgb.sum()));
    assert!(close(l.spectral, spectral));
    assert!(close(l.band, band));
    assert!(close(l.domain, domain));
    let recombined = cfg.weights.combine(l.band, l.rgb, l.spectral, l.domain);
    assert!((recombined - l.total).abs() <= 1e-12 * l.total.abs());
    assert!(l.total >= cfg.weights.spectral * l.spectral);
}

#[test]
fn loss_total_rejects_empty_batch() {
    let m = model(8, 1);
    let err = loss_total(&[], &m, &TrainConfig::default(), &CounterRng::new(1)).unwrap_err();
    assert!(matches!(err, Error::Empty(_)));
}

#[test]
fn training_edge_cases_and_determinism() {
    let data = small_data(2, 8);
    let rm = ResponseMatrix::standard();
    let base = TrainConfig {
        hidden: 8,
        steps: 5,
        seed: 4,
        ..Default::default()
    };

    let frozen = train(&data, &rm, &rm, &TrainConfig { lr: 0.0, ..base }).unwrap();
    assert_eq!(frozen.model, frozen.best);
    let init = RecoveryModel::init(8, &rm, &rm, &base.camera, base.seed).unwrap();
    assert_eq!(frozen.model, init);

    let none = train(&data, &rm, &rm, &TrainConfig { steps: 0, ..base }).unwrap();
    assert_eq!(none.model, init);
    assert!(none.trace.is_empty() && none.best_step.is_none());

    let a = train(&data, &rm, &rm, &base).unwrap();
    let b = train(&data, &rm, &rm, &base).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace, b.trace);
    assert_ne!(a.model, init);

    let argmin = (0..a.trace.len())
        .min_by(|&i, &j| a.trace[i].trans.total_cmp(&a.trace[j].trans))
        .unwrap();
    assert_eq!(a.best_step, Some(argmin));

    let empty = TrainData {
        pairs: vec![],
        material: data.material.clone(),
    };
    assert!(train(&empty, &rm, &rm, &base).is_err());
}

#[test]
fn quadratic_finite_difference_is_tight() {
    // f(x) = Σ c_i x_i² + x_0 x_1
    let c = [0.5, 2.0, 3.0, 0.25];
    let f = |x: &[f64]| -> Result<(f64, u64)> {
        Ok((x.iter().zip(&c).map(|(x, c)| c * x * x).sum::<f64>() + x[0] * x[1], 0))
    };
    let x = [0.3, -1.2, 0.7, 2.0];
    let grad = [2.0 * c[0] * x[0] + x[1], 2.0 * c[1] * x[1] + x[0], 2.0 * c[2] * x[2], 2.0 * c[3] * x[3]];
    let errs = finite_difference_check(f, &x, &grad, &[0, 1, 2, 3], 1e-5, GRAD_CHECK_FLOOR).unwrap();
    for e in errs {
        assert!(e.unwrap() < 1e-7);
    }
}

#[test]
fn excluded_coordinates_are_reported() {
    // |x| probed across its kink
    let f = |x: &[f64]| -> Result<(f64, u64)> { Ok((x[0].abs() + x[1] * x[1], (x[0] >= 0.0) as u64)) };
    let errs = finite_difference_check(f, &[1e-6, 1.0], &[1.0, 2.0], &[0, 1], 1e-5, GRAD_CHECK_FLOOR).unwrap();
    assert_eq!(errs[0], None);
    assert!(errs[1].unwrap() < 1e-8);
}

#[test]
fn full_pipeline_gradients_match() {
    let data = small_data(1, 8);
    let m = model(16, 30);
    let cfg = TrainConfig {
        hidden: 16,
        ..Default::default()
    };
    let item = BatchItem {
        x_s: &data.pairs[0].rgb,
        h_s: &data.pairs[0].cube,
        x_m: &data.material[0],
    };
    let report = grad_check(&m, &item, &cfg, &CounterRng::new(31), 120, 32).unwrap();
    assert!(report.checked >= 100, "{report:?}");
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn checkpoint_roundtrip_restores_model() {
    let m = model(8, 40);
    let mut buf = Vec::new();
    m.params().write_to(&mut buf).unwrap();
    let back = RecoveryModel::from_params(ParamStore::read_from(buf.as_slice()).unwrap()).unwrap();
    let mut q = m.params().clone();
    q.quantize_f32();
    assert_eq!(back.params(), &q);
    assert_eq!(back.hidden(), 8);

    let mut broken = m.params().clone();
    broken.insert("trunk.w2", vec![0.0; 3]);
    assert!(RecoveryModel::from_params(broken).unwrap_err().to_string().contains("trunk.w2"));
}

#[test]
fn effective_camera_starts_at_stored_state() {
    let m = model(8, 41);
    let x = image_of(&cube(4, 4, 1), 1);
    let (rm, p) = m.effective_camera(Dataset::Material, &x, 90).unwrap();
    assert_eq!(rm.displacement(), &[0.0; N_BANDS]);
    assert!((p.sigma - 0.01).abs() < 1e-15);
    assert!((p.nu - 1e4).abs() < 1e-9);
    let _ = project_to_rgb(&cube(2, 2, 1), &rm);
}


#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(LrSchedule::Constant.rate(0.3, 7, 10), 0.3);
    assert_eq!(LrSchedule::Cosine.rate(0.3, 0, 10), 0.3);
    assert!((LrSchedule::Cosine.rate(0.3, 5, 10) - 0.15).abs() < 1e-15);
    assert!(LrSchedule::Cosine.rate(0.3, 10, 10).abs() < 1e-15);
    let rates: Vec<f64> = (0..=10).map(|s| LrSchedule::Cosine.rate(1.0, s, 10)).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
}
