use spectrapipe_core::camera::{camera_forward, CameraMode, CameraParams};
use spectrapipe_core::filters::FilterBank;
use spectrapipe_core::matching::{attach_observations, SpectralDb, SpectralDbEntry};
use spectrapipe_core::params::ParamStore;
use spectrapipe_core::recovery::{loss_total, recover, train_model, BatchItem, RecoveryModel, SpectralPair, TrainConfig, TrainData};
use spectrapipe_core::response::ResponseMatrix;
use spectrapipe_core::rng::CounterRng;
use spectrapipe_core::segmentation::{segment, SegModel};
use spectrapipe_core::{SpectralCube, N_BANDS};

fn scene(h: usize, w: usize, seed: u64) -> SpectralCube {
    let r = CounterRng::new(seed);
    SpectralCube::from_fn(h, w, |row, col| {
        let p = (row * w + col) as u64;
        let a = 0.1 + 0.5 * r.uniform(p, 0);
        let tilt = r.uniform(p, 1) - 0.5;
        std::array::from_fn(|b| a + 0.2 * tilt * (b as f64 / 30.0))
    })
    .unwrap()
}

fn data(n: usize) -> TrainData {
    let rm = ResponseMatrix::standard();
    let p = CameraParams::default();
    let mut d = TrainData::default();
    for i in 0..n {
        let cube = scene(6, 6, i as u64);
        let rgb = camera_forward(&cube, &rm, &p, &CounterRng::new(100 + i as u64)).unwrap();
        let x_m = camera_forward(&scene(6, 6, 50 + i as u64), &rm, &p, &CounterRng::new(200 + i as u64)).unwrap();
        d.pairs.push(SpectralPair { rgb, cube });
        d.material.push(x_m);
    }
    d
}

#[test]
fn checkpoint_file_reproduces_recovery() {
    let rm = ResponseMatrix::standard();
    let model = RecoveryModel::init(8, &rm, &rm, &CameraParams::default(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.msnm");
    model.params().save(&path).unwrap();
    let loaded = RecoveryModel::from_params(ParamStore::load(&path).unwrap()).unwrap();
    let mut quantized = model.params().clone();
    quantized.quantize_f32();
    let reference = RecoveryModel::from_params(quantized).unwrap();
    let x = &data(1).material[0];
    assert_eq!(recover(&loaded, x), recover(&reference, x));
    assert!(recover(&loaded, x).data().iter().all(|v| *v >= 0.0));
}

#[test]
fn short_training_run_is_deterministic_and_tracks_best() {
    let rm = ResponseMatrix::standard();
    let d = data(3);
    let cfg = TrainConfig {
        steps: 12,
        hidden: 8,
        seed: 5,
        ..Default::default()
    };
    let init = RecoveryModel::init(cfg.hidden, &rm, &rm, &cfg.camera, cfg.seed).unwrap();
    let a = train_model(init.clone(), &d, &cfg, |_, _| {}).unwrap();
    let b = train_model(init.clone(), &d, &cfg, |_, _| {}).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model.params(), b.model.params());
    let best = a.best_step.unwrap();
    let min = a.trace.iter().map(|l| l.trans).fold(f64::INFINITY, f64::min);
    assert_eq!(a.trace[best].trans, min);

    // the first trace entry is the objective of the untouched model
    let item = BatchItem {
        x_s: &d.pairs[0].rgb,
        h_s: &d.pairs[0].cube,
        x_m: &d.material[0],
    };
    let l = loss_total(&[item], &init, &cfg, &CounterRng::new(1)).unwrap();
    assert!(l.total.is_finite() && l.total > 0.0);
}

#[test]
fn segmentation_consumes_filters_and_observations() {
    let entries: Vec<SpectralDbEntry> = (0..4)
        .map(|k| SpectralDbEntry {
            id: format!("e{k}"),
            spectrum: std::array::from_fn(|b| 0.1 + 0.02 * k as f64 * (b as f64 / 30.0)),
            specularity: 0.1 * k as f64,
            roughness: 0.5,
            photopic_reflectance: 0.2,
            melanopic_reflectance: 0.2,
            material_label: (k % 2) as u8,
        })
        .collect();
    let db = SpectralDb::new(entries).unwrap();
    let cube = scene(5, 4, 8);
    let obs = attach_observations(&cube, &db).unwrap();
    assert_eq!(obs.pixels.len(), 20);
    let fb = FilterBank::new(6).unwrap();
    let model = SegModel::init(6, 4, 2, 1).unwrap();
    let seg = segment(&cube, &fb, &db, &model).unwrap();
    assert_eq!(seg.labels.labels().len(), 20);
    for row in seg.probabilities.chunks(2) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(segment(&cube, &FilterBank::new(5).unwrap(), &db, &model).is_err());
}

#[test]
fn differentiable_and_sampled_cameras_agree_without_noise() {
    let rm = ResponseMatrix::standard();
    let h = scene(8, 8, 3);
    let p = CameraParams {
        sigma: 0.0,
        nu: 1e12,
        jpeg_quality: 100,
        ..Default::default()
    };
    let a = camera_forward(&h, &rm, &p, &CounterRng::new(0)).unwrap();
    let b = camera_forward(&h, &rm, &p.with_mode(CameraMode::Differentiable), &CounterRng::new(0)).unwrap();
    let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 0.02, "{worst}");
    assert_eq!(N_BANDS, 31);
}
