//! Value types shared by every stage: the wavelength grid, hyperspectral
//! cubes, RGB images and label maps.
//!
//! All images are stored plane-major: one contiguous plane per band (or
//! colour channel), row-major within the plane.

use crate::error::{Error, Result};

/// Number of spectral bands on the working grid.
pub const N_BANDS: usize = 31;
/// First wavelength of the grid in nanometres.
pub const WAVELENGTH_START: f64 = 400.0;
/// Grid step in nanometres.
pub const WAVELENGTH_STEP: f64 = 10.0;

/// A single spectrum sampled on the band grid.
pub type Spectrum = [f64; N_BANDS];

/// The fixed 400–700 nm grid with a 10 nm step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BandGrid;

impl BandGrid {
    pub fn len(&self) -> usize {
        N_BANDS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn wavelength(&self, band: usize) -> f64 {
        WAVELENGTH_START + WAVELENGTH_STEP * band as f64
    }

    pub fn wavelengths(&self) -> [f64; N_BANDS] {
        std::array::from_fn(|i| self.wavelength(i))
    }

    /// Checks that `values` are exactly the grid wavelengths.
    pub fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() != N_BANDS {
            return Err(Error::format(
                "wavelength",
                format!("expected {N_BANDS} bands, found {}", values.len()),
            ));
        }
        for (i, w) in values.iter().enumerate() {
            if i > 0 && *w <= values[i - 1] {
                return Err(Error::format(
                    "wavelength",
                    format!("not strictly increasing at row {i} ({w})"),
                ));
            }
            if (w - self.wavelength(i)).abs() > 1e-9 {
                return Err(Error::format(
                    "wavelength",
                    format!("row {i}: expected {}, found {w}", self.wavelength(i)),
                ));
            }
        }
        Ok(())
    }
}

/// Anything that is a dense block of real samples with a known shape.
pub trait Samples {
    /// `(planes, height, width)`.
    fn shape(&self) -> (usize, usize, usize);
    fn values(&self) -> &[f64];
}

/// Calibrated reflectance cube, `N_BANDS` planes of `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SpectralCube {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = N_BANDS * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{N_BANDS} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!(
                "cube value at index {i} is {} (must be finite and >= 0)",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; N_BANDS * height * width],
        }
    }

    /// Builds a cube from a per-pixel spectrum function.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Spectrum) -> Result<Self> {
        let plane = height * width;
        let mut data = vec![0.0; N_BANDS * plane];
        for r in 0..height {
            for c in 0..width {
                let s = f(r, c);
                for (b, v) in s.iter().enumerate() {
                    data[b * plane + r * width + c] = *v;
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let plane = self.pixels();
        &self.data[b * plane..(b + 1) * plane]
    }

    /// Spectrum at flat pixel index `p = row * width + col`.
    pub fn spectrum_at(&self, p: usize) -> Spectrum {
        let plane = self.pixels();
        std::array::from_fn(|b| self.data[b * plane + p])
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Spectrum {
        self.spectrum_at(row * self.width + col)
    }
}

impl Samples for SpectralCube {
    fn shape(&self) -> (usize, usize, usize) {
        (N_BANDS, self.height, self.width)
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Three-channel image, channel planes in R, G, B order.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = 3 * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "rgb {height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("rgb value at index {i} is not finite")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; 3 * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.pixels();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[channel * self.pixels() + row * self.width + col]
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl Samples for RgbImage {
    fn shape(&self) -> (usize, usize, usize) {
        (3, self.height, self.width)
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel class ids with a reserved "unlabeled" value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    /// Sentinel for pixels without ground truth.
    pub const UNLABELED: u8 = 255;
    /// Largest usable class count.
    pub const MAX_CLASSES: usize = 254;

    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn is_labeled(label: u8) -> bool {
        label != Self::UNLABELED
    }

    /// Checks every label is below `classes` or the sentinel.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != Self::UNLABELED && l as usize >= classes)
        {
            Some(l) => Err(Error::Domain(format!(
                "label {l} outside [0, {classes})"
            ))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_matches_400_to_700() {
        let w = BandGrid.wavelengths();
        assert_eq!(w.len(), 31);
        assert_eq!(w[0], 400.0);
        assert_eq!(w[30], 700.0);
        assert!(w.windows(2).all(|p| p[1] - p[0] == 10.0));
        assert!(BandGrid.check(&w).is_ok());
    }

    #[test]
    fn grid_rejects_bad_wavelengths() {
        let mut w = BandGrid.wavelengths().to_vec();
        w.swap(3, 4);
        assert!(BandGrid.check(&w).is_err());
        assert!(BandGrid.check(&w[..30]).is_err());
        let shifted: Vec<f64> = BandGrid.wavelengths().iter().map(|v| v + 5.0).collect();
        assert!(BandGrid.check(&shifted).is_err());
    }

    #[test]
    fn cube_rejects_negative_and_wrong_length() {
        assert!(SpectralCube::new(1, 1, vec![0.5; 30]).is_err());
        let mut d = vec![0.5; 31];
        d[7] = -0.1;
        assert!(matches!(SpectralCube::new(1, 1, d), Err(Error::Domain(_))));
        let mut d = vec![0.5; 31];
        d[2] = f64::NAN;
        assert!(SpectralCube::new(1, 1, d).is_err());
    }

    #[test]
    fn cube_layout_is_band_major() {
        let cube = SpectralCube::from_fn(2, 3, |r, c| {
            std::array::from_fn(|b| (100 * b + 10 * r + c) as f64)
        })
        .unwrap();
        assert_eq!(cube.band(4)[1 * 3 + 2], 412.0);
        assert_eq!(cube.spectrum(1, 2)[4], 412.0);
        assert_eq!(cube.data()[4 * 6 + 5], 412.0);
    }

    #[test]
    fn label_classes_checked() {
        let m = LabelMap::new(1, 3, vec![0, 2, LabelMap::UNLABELED]).unwrap();
        assert!(m.check_classes(3).is_ok());
        assert!(m.check_classes(2).is_err());
    }
}
