use spectrapipe::data::{load_labelled, load_train_data, sample_count};
use spectrapipe::formats::{encode_cube, encode_pfm};
use spectrapipe::synth::*;
use spectrapipe_core::camera::CameraParams;
use spectrapipe_core::{LabelMap, N_BANDS};

fn spec(seed: u64, mode: SynthMode) -> SynthSpec {
    SynthSpec {
        seed,
        count: 4,
        size: 16,
        classes: 3,
        mode,
        camera: CameraParams::default(),
    }
}

/// Basis mixture written out from the generator's definition: Gaussians of
/// width 40 nm centred at 400 + j·300/7 nm over a 0.05 floor.
fn mixture(c: &[f64]) -> Vec<f64> {
    (0..N_BANDS)
        .map(|b| {
            let lambda = 400.0 + 10.0 * b as f64;
            0.05 + c
                .iter()
                .enumerate()
                .map(|(j, cj)| {
                    let centre = 400.0 + j as f64 * 300.0 / 7.0;
                    cj * (-(lambda - centre).powi(2) / 3200.0).exp()
                })
                .sum::<f64>()
        })
        .collect()
}

#[test]
fn same_seed_same_bytes() {
    for mode in [SynthMode::Standard, SynthMode::Linear] {
        let a = generate(&spec(5, mode)).unwrap();
        let b = generate(&spec(5, mode)).unwrap();
        let c = generate(&spec(6, mode)).unwrap();
        for i in 0..4 {
            assert_eq!(encode_cube(&a.spectral[i].cube), encode_cube(&b.spectral[i].cube));
            assert_eq!(encode_pfm(&a.rgb[i]), encode_pfm(&b.rgb[i]));
            assert_eq!(encode_pfm(&a.material_rgb[i]), encode_pfm(&b.material_rgb[i]));
            assert_eq!(a.material[i].labels, b.material[i].labels);
        }
        assert_eq!(a.db.to_csv(), b.db.to_csv());
        assert_ne!(encode_cube(&a.spectral[0].cube), encode_cube(&c.spectral[0].cube));
    }
}

#[test]
fn spectra_are_non_negative_and_anchors_unlabeled() {
    let set = generate(&spec(1, SynthMode::Standard)).unwrap();
    for scene in set.spectral.iter().chain(&set.material) {
        assert!(scene.cube.data().iter().all(|v| *v >= 0.0));
        assert_eq!(scene.labels.labels()[0], LabelMap::UNLABELED);
        assert_eq!(scene.labels.labels()[1], LabelMap::UNLABELED);
        assert!(scene.labels.labels().iter().any(|l| LabelMap::is_labeled(*l)));
    }
    assert!(set.rgb.iter().chain(&set.material_rgb).all(|x| x.in_unit_range()));
    assert_eq!(set.db.len(), 3 * DB_PER_CLASS);
    for (i, e) in set.db.entries().iter().enumerate() {
        assert_eq!(e.material_label as usize, i / DB_PER_CLASS);
    }
}

#[test]
fn class_means_match_their_prototypes() {
    let mut s = spec(11, SynthMode::Standard);
    s.count = 12;
    s.size = 24;
    let set = generate(&s).unwrap();
    for (k, proto) in set.prototypes.iter().enumerate() {
        let expected = mixture(proto);
        let mut sum = vec![0.0; N_BANDS];
        let mut sq = vec![0.0; N_BANDS];
        let mut n = 0.0;
        for scene in set.spectral.iter().chain(&set.material) {
            for (p, l) in scene.labels.labels().iter().enumerate() {
                if *l as usize == k {
                    let s = scene.cube.spectrum_at(p);
                    for b in 0..N_BANDS {
                        sum[b] += s[b];
                        sq[b] += s[b] * s[b];
                    }
                    n += 1.0;
                }
            }
        }
        assert!(n > 100.0, "class {k} has only {n} pixels");
        for b in 0..N_BANDS {
            let mean = sum[b] / n;
            let sd = (sq[b] / n - mean * mean).max(0.0).sqrt();
            let tol = 5.0 * sd / n.sqrt() + 1e-12;
            assert!((mean - expected[b]).abs() <= tol, "class {k} band {b}: {mean} vs {}", expected[b]);
        }
    }
}

#[test]
fn linear_spectra_lie_in_a_three_dimensional_span() {
    let set = generate(&spec(2, SynthMode::Linear)).unwrap();
    let m = linear_mixing();
    // Gram matrix of the mixing vectors and its inverse by cofactors.
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let g: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| dot(&m[i], &m[j])).collect()).collect();
    let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
        + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    assert!(det.abs() > 1e-6);
    let inv = |i: usize, j: usize| {
        let (r, c) = ([(1, 2), (0, 2), (0, 1)][j], [(1, 2), (0, 2), (0, 1)][i]);
        let minor = g[r.0][c.0] * g[r.1][c.1] - g[r.0][c.1] * g[r.1][c.0];
        if (i + j) % 2 == 0 { minor / det } else { -minor / det }
    };
    for scene in &set.spectral {
        for p in 0..scene.cube.pixels() {
            let s = scene.cube.spectrum_at(p);
            let rhs: Vec<f64> = (0..3).map(|i| dot(&m[i], &s)).collect();
            let c: Vec<f64> = (0..3).map(|i| (0..3).map(|j| inv(i, j) * rhs[j]).sum()).collect();
            for b in 0..N_BANDS {
                let fit: f64 = (0..3).map(|i| c[i] * m[i][b]).sum();
                assert!((fit - s[b]).abs() < 1e-9);
            }
            assert!(c.iter().all(|v| (LINEAR_RANGE.0 - 1e-9..=LINEAR_RANGE.1 + 1e-9).contains(v)), "{c:?}");
        }
    }
}

#[test]
fn written_sets_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let set = generate(&spec(3, SynthMode::Standard)).unwrap();
    write_set(&set, dir.path()).unwrap();
    assert_eq!(sample_count(dir.path()).unwrap(), 4);
    let data = load_train_data(dir.path()).unwrap();
    assert_eq!(data.pairs.len(), 4);
    assert_eq!(data.material.len(), 4);
    assert_eq!(encode_pfm(&data.pairs[2].rgb), encode_pfm(&set.rgb[2]));
    let labelled = load_labelled(dir.path(), true).unwrap();
    assert_eq!(labelled[1].1, set.material[1].labels);
    assert_eq!(encode_cube(&labelled[1].0), encode_cube(&set.material[1].cube));
    assert!(sample_count(&dir.path().join("missing")).is_err());
}
