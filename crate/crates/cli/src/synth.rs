//! Synthetic scenes: smooth spectra built from 8 Gaussian basis functions,
//! Voronoi class layouts, a matching spectral database and two cameras.
//!
//! Every pixel of class `k` draws its basis coefficients around the class
//! prototype, so a class is a region of coefficient space. Pixels on a
//! boundary between regions of different classes are left unlabeled.
//!
//! In linear mode the spectra are `M·c` with a fixed `31×3` mixing matrix
//! and `c ∈ [0.3, 1]³`, so each cube lies in a 3-dimensional subspace and
//! its RGB image determines it.
//!
//! Two anchor pixels (top-left corner) hold the darkest and brightest
//! spectrum the generator can produce. Every other pixel projects between
//! them, so per-image normalisation uses the same range in every image.

use crate::formats::{write_cube, write_pfm, write_pgm};
use anyhow::{Context, Result};
use rand::Rng;
use spectrapipe_core::camera::{camera_forward, CameraParams};
use spectrapipe_core::matching::{melanopic_curve, photopic_curve, weighted_reflectance, SpectralDb, SpectralDbEntry};
use spectrapipe_core::response::ResponseMatrix;
use spectrapipe_core::rng::{seeded, CounterRng};
use spectrapipe_core::types::{BandGrid, LabelMap, RgbImage, SpectralCube, Spectrum};
use std::path::Path;

pub const N_BASIS: usize = 8;
/// Width (standard deviation) of each basis function, in nm.
pub const BASIS_WIDTH: f64 = 40.0;
/// Constant reflectance under every generated spectrum.
pub const REFLECTANCE_FLOOR: f64 = 0.05;
/// Coefficient range of linear mode.
pub const LINEAR_RANGE: (f64, f64) = (0.3, 1.0);
/// Database entries per class.
pub const DB_PER_CLASS: usize = 3;
/// Voronoi sites per scene.
const SITES: usize = 6;
/// Relative jitter of standard-mode coefficients.
const JITTER: f64 = 0.15;
/// Standard-mode prototype coefficient range.
const PROTO_RANGE: (f64, f64) = (0.05, 0.6);
/// Anchor coefficients in standard mode: below and above any jittered
/// prototype coefficient.
const ANCHORS: (f64, f64) = (0.04, 0.7);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Standard,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub classes: usize,
    pub mode: SynthMode,
    pub camera: CameraParams,
}

/// `basis[j][b]`: Gaussian centred at `400 + j·300/7` nm.
pub fn gaussian_basis() -> [Spectrum; N_BASIS] {
    std::array::from_fn(|j| {
        let centre = 400.0 + j as f64 * 300.0 / (N_BASIS - 1) as f64;
        std::array::from_fn(|b| {
            let d = BandGrid.wavelength(b) - centre;
            (-d * d / (2.0 * BASIS_WIDTH * BASIS_WIDTH)).exp()
        })
    })
}

/// Linear-mode mixing matrix: three non-overlapping groups of basis
/// functions (blue, green, red side) on top of the reflectance floor.
pub fn linear_mixing() -> [Spectrum; 3] {
    let basis = gaussian_basis();
    let groups: [&[usize]; 3] = [&[0, 1, 2], &[3, 4], &[5, 6, 7]];
    std::array::from_fn(|a| {
        std::array::from_fn(|b| REFLECTANCE_FLOOR + 0.4 * groups[a].iter().map(|&j| basis[j][b]).sum::<f64>())
    })
}

/// The material camera: the standard curves with a smooth fixed
/// displacement.
pub fn material_curves() -> ResponseMatrix {
    let standard = ResponseMatrix::standard();
    let displacement: Spectrum =
        std::array::from_fn(|b| 0.03 * (std::f64::consts::TAU * b as f64 / 30.0).sin());
    standard.with_displacement(displacement).expect("finite displacement")
}

/// Coefficient vectors (8 in standard mode, 3 in linear mode) to spectra.
#[derive(Debug, Clone)]
pub struct Generator {
    mode: SynthMode,
    basis: [Spectrum; N_BASIS],
    mixing: [Spectrum; 3],
}

impl Generator {
    pub fn new(mode: SynthMode) -> Self {
        Self {
            mode,
            basis: gaussian_basis(),
            mixing: linear_mixing(),
        }
    }

    pub fn dims(&self) -> usize {
        match self.mode {
            SynthMode::Standard => N_BASIS,
            SynthMode::Linear => 3,
        }
    }

    pub fn spectrum(&self, c: &[f64]) -> Spectrum {
        std::array::from_fn(|b| match self.mode {
            SynthMode::Standard => REFLECTANCE_FLOOR + c.iter().zip(&self.basis).map(|(c, g)| c * g[b]).sum::<f64>(),
            SynthMode::Linear => c.iter().zip(&self.mixing).map(|(c, m)| c * m[b]).sum(),
        })
    }

    pub fn prototype(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self.mode {
            SynthMode::Standard => (0..N_BASIS).map(|_| rng.gen_range(PROTO_RANGE.0..PROTO_RANGE.1)).collect(),
            SynthMode::Linear => (0..3).map(|_| rng.gen_range(0.4..0.9)).collect(),
        }
    }

    /// A pixel's coefficients around `proto`. The jitter has mean zero
    /// (multiplicative in standard mode), so class means equal prototypes.
    pub fn jitter(&self, proto: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        match self.mode {
            SynthMode::Standard => proto.iter().map(|p| p * (1.0 + rng.gen_range(-JITTER..JITTER))).collect(),
            SynthMode::Linear => proto.iter().map(|p| p + rng.gen_range(-0.1..0.1)).collect(),
        }
    }

    pub fn anchors(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = match self.mode {
            SynthMode::Standard => ANCHORS,
            SynthMode::Linear => LINEAR_RANGE,
        };
        (vec![lo; self.dims()], vec![hi; self.dims()])
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: SpectralCube,
    pub labels: LabelMap,
}

#[derive(Debug, Clone)]
pub struct SynthSet {
    /// Class prototypes in coefficient space.
    pub prototypes: Vec<Vec<f64>>,
    pub db: SpectralDb,
    /// Paired scenes, seen through the spectral camera.
    pub spectral: Vec<Scene>,
    pub rgb: Vec<RgbImage>,
    /// Separate scenes, seen through the material camera.
    pub material: Vec<Scene>,
    pub material_rgb: Vec<RgbImage>,
    pub curves: ResponseMatrix,
    pub curves_material: ResponseMatrix,
}

fn scene(generator: &Generator, prototypes: &[Vec<f64>], size: usize, rng: &mut impl Rng) -> Scene {
    let classes = prototypes.len();
    let sites: Vec<(f64, f64, usize)> = (0..SITES)
        .map(|_| (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64), rng.gen_range(0..classes)))
        .collect();
    let class_at = |r: usize, c: usize| {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        let mut best = (f64::INFINITY, 0);
        for &(sy, sx, k) in &sites {
            let d = (sy - y).powi(2) + (sx - x).powi(2);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    };
    let mut class = vec![0; size * size];
    for r in 0..size {
        for c in 0..size {
            class[r * size + c] = class_at(r, c);
        }
    }
    let (dark, bright) = generator.anchors();
    let mut labels = vec![LabelMap::UNLABELED; size * size];
    let cube = SpectralCube::from_fn(size, size, |r, c| {
        let p = r * size + c;
        if p < 2 {
            return generator.spectrum(if p == 0 { &dark } else { &bright });
        }
        let k = class[p];
        let boundary = [(0isize, 1isize), (1, 0), (0, -1), (-1, 0)].iter().any(|(dr, dc)| {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            (0..size as isize).contains(&rr) && (0..size as isize).contains(&cc) && class[rr as usize * size + cc as usize] != k
        });
        if !boundary {
            labels[p] = k as u8;
        }
        generator.spectrum(&generator.jitter(&prototypes[k], rng))
    })
    .expect("generated spectra are finite and non-negative");
    Scene {
        cube,
        labels: LabelMap::new(size, size, labels).expect("sized to the cube"),
    }
}

fn database(generator: &Generator, prototypes: &[Vec<f64>], rng: &mut impl Rng) -> SpectralDb {
    let (photopic, melanopic) = (photopic_curve(), melanopic_curve());
    let mut entries = Vec::new();
    for (k, proto) in prototypes.iter().enumerate() {
        let specularity = rng.gen_range(0.0..1.0);
        let roughness = rng.gen_range(0.0..1.0);
        for j in 0..DB_PER_CLASS {
            let spectrum = generator.spectrum(&generator.jitter(proto, rng));
            entries.push(SpectralDbEntry {
                id: format!("class{k}_{j}"),
                spectrum,
                specularity,
                roughness,
                photopic_reflectance: weighted_reflectance(&spectrum, &photopic).expect("positive curve"),
                melanopic_reflectance: weighted_reflectance(&spectrum, &melanopic).expect("positive curve"),
                material_label: k as u8,
            });
        }
    }
    SpectralDb::new(entries).expect("generated entries are valid")
}

/// Generates a full synthetic set. Camera noise for image `i` uses
/// `CounterRng::new(seed).fork(2i)` (spectral) and `fork(2i + 1)`
/// (material).
pub fn generate(spec: &SynthSpec) -> Result<SynthSet> {
    anyhow::ensure!(spec.size >= 2, "size must be at least 2");
    anyhow::ensure!(
        (1..=LabelMap::MAX_CLASSES).contains(&spec.classes),
        "classes must be in 1..={}",
        LabelMap::MAX_CLASSES
    );
    let generator = Generator::new(spec.mode);
    let mut rng = seeded(spec.seed);
    let prototypes: Vec<Vec<f64>> = (0..spec.classes).map(|_| generator.prototype(&mut rng)).collect();
    let db = database(&generator, &prototypes, &mut rng);
    let curves = ResponseMatrix::standard();
    let curves_material = material_curves();
    let noise = CounterRng::new(spec.seed);
    let (mut spectral, mut rgb, mut material, mut material_rgb) = (vec![], vec![], vec![], vec![]);
    for i in 0..spec.count {
        let s = scene(&generator, &prototypes, spec.size, &mut rng);
        let m = scene(&generator, &prototypes, spec.size, &mut rng);
        rgb.push(camera_forward(&s.cube, &curves, &spec.camera, &noise.fork(2 * i as u64))?);
        material_rgb.push(camera_forward(&m.cube, &curves_material, &spec.camera, &noise.fork(2 * i as u64 + 1))?);
        spectral.push(s);
        material.push(m);
    }
    Ok(SynthSet {
        prototypes,
        db,
        spectral,
        rgb,
        material,
        material_rgb,
        curves,
        curves_material,
    })
}

/// File names of sample `i` in a synthetic directory.
pub struct SampleFiles {
    pub cube: String,
    pub labels: String,
    pub rgb: String,
    pub material_cube: String,
    pub material_labels: String,
    pub material_rgb: String,
}

pub fn sample_files(i: usize) -> SampleFiles {
    SampleFiles {
        cube: format!("cube_{i:04}.hsc"),
        labels: format!("labels_{i:04}.pgm"),
        rgb: format!("rgb_{i:04}.pfm"),
        material_cube: format!("material_cube_{i:04}.hsc"),
        material_labels: format!("material_labels_{i:04}.pgm"),
        material_rgb: format!("material_{i:04}.pfm"),
    }
}

pub fn write_set(set: &SynthSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, text: String| {
        std::fs::write(dir.join(name), text).with_context(|| format!("writing {}", dir.join(name).display()))
    };
    write("db.csv", set.db.to_csv())?;
    write("curves.csv", set.curves.to_csv())?;
    write("curves_material.csv", set.curves_material.to_csv())?;
    for i in 0..set.spectral.len() {
        let f = sample_files(i);
        write_cube(&dir.join(&f.cube), &set.spectral[i].cube)?;
        write_pgm(&dir.join(&f.labels), &set.spectral[i].labels)?;
        write_pfm(&dir.join(&f.rgb), &set.rgb[i])?;
        write_cube(&dir.join(&f.material_cube), &set.material[i].cube)?;
        write_pgm(&dir.join(&f.material_labels), &set.material[i].labels)?;
        write_pfm(&dir.join(&f.material_rgb), &set.material_rgb[i])?;
    }
    Ok(())
}
