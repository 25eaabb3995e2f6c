//! Loading the sample sets written by `gen-synth`.

use crate::formats::{read_cube, read_pfm, read_pgm};
use crate::synth::sample_files;
use anyhow::{ensure, Result};
use spectrapipe_core::recovery::{SpectralPair, TrainData};
use spectrapipe_core::{LabelMap, SpectralCube};
use std::path::Path;

/// Number of consecutive samples `0..n` present in `dir`.
pub fn sample_count(dir: &Path) -> Result<usize> {
    ensure!(dir.is_dir(), "data directory {} does not exist", dir.display());
    let mut n = 0;
    while dir.join(sample_files(n).cube).exists() {
        n += 1;
    }
    ensure!(n > 0, "no samples (cube_0000.hsc) in {}", dir.display());
    Ok(n)
}

/// Spectral pairs and material images.
pub fn load_train_data(dir: &Path) -> Result<TrainData> {
    let n = sample_count(dir)?;
    let mut data = TrainData::default();
    for i in 0..n {
        let f = sample_files(i);
        data.pairs.push(SpectralPair {
            rgb: read_pfm(&dir.join(&f.rgb))?,
            cube: read_cube(&dir.join(&f.cube))?,
        });
        data.material.push(read_pfm(&dir.join(&f.material_rgb))?);
    }
    Ok(data)
}

/// Labelled cubes: the paired scenes, or the material scenes.
pub fn load_labelled(dir: &Path, material: bool) -> Result<Vec<(SpectralCube, LabelMap)>> {
    let n = sample_count(dir)?;
    (0..n)
        .map(|i| {
            let f = sample_files(i);
            let (cube, labels) = if material {
                (f.material_cube, f.material_labels)
            } else {
                (f.cube, f.labels)
            };
            Ok((read_cube(&dir.join(cube))?, read_pgm(&dir.join(labels))?))
        })
        .collect()
}
