//! Spectral recovery under a trainable camera model, spectral filtering,
//! spectral database matching and material segmentation.

pub mod autodiff;
pub mod camera;
pub mod domain;
pub mod error;
pub mod filters;
pub mod matching;
pub mod metrics;
pub mod params;
pub mod recovery;
pub mod response;
pub mod rng;
pub mod segmentation;
pub mod table;
pub mod types;

pub use error::{Error, Result};
pub use types::{BandGrid, LabelMap, RgbImage, Samples, SpectralCube, Spectrum, N_BANDS};
