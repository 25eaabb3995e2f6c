//! Spectra shape matrices, nearest-entry lookup in a spectral measurement
//! database, and the observation attributes carried over from the match.
//!
//! A shape matrix holds every pairwise band difference `|s_a − s_b|`. It
//! ignores a constant offset of the spectrum but not its scale. Entries are
//! compared by the Frobenius distance between shape matrices, using a plain
//! linear scan.

use crate::error::{Error, Result};
use crate::table::{fmt_exact, Table};
use crate::types::{BandGrid, LabelMap, SpectralCube, Spectrum, N_BANDS};
use rayon::prelude::*;
use std::path::Path;

const PHOTOPIC: &str = include_str!("../data/photopic.csv");
const MELANOPIC: &str = include_str!("../data/melanopic.csv");

/// Columns before the spectrum in a database CSV.
pub const DB_FIELDS: [&str; 6] = ["id", "label", "specularity", "roughness", "photopic", "melanopic"];

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix(Vec<f64>);

impl ShapeMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0[a * N_BANDS + b]
    }

    /// Row-major `31 × 31` entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Frobenius norm of the difference.
    pub fn distance(&self, other: &ShapeMatrix) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn shape_matrix(s: &[f64]) -> Result<ShapeMatrix> {
    if s.len() != N_BANDS {
        return Err(Error::Shape(format!("spectrum has {} bands, expected {N_BANDS}", s.len())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("spectrum contains non-finite values".into()));
    }
    let mut m = vec![0.0; N_BANDS * N_BANDS];
    for a in 0..N_BANDS {
        for b in 0..N_BANDS {
            m[a * N_BANDS + b] = (s[a] - s[b]).abs();
        }
    }
    Ok(ShapeMatrix(m))
}

/// One measured spectrum with its observation attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDbEntry {
    pub id: String,
    pub spectrum: Spectrum,
    pub specularity: f64,
    pub roughness: f64,
    pub photopic_reflectance: f64,
    pub melanopic_reflectance: f64,
    pub material_label: u8,
}

impl SpectralDbEntry {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: &str| Err(Error::format(format!("{name} of entry `{}`", self.id), reason));
        if self.spectrum.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return field("spectrum", "values must be finite and >= 0");
        }
        for (name, v) in [("specularity", self.specularity), ("roughness", self.roughness)] {
            if !(0.0..=1.0).contains(&v) {
                return field(name, "must be in [0, 1]");
            }
        }
        for (name, v) in [("photopic", self.photopic_reflectance), ("melanopic", self.melanopic_reflectance)] {
            if !v.is_finite() || v < 0.0 {
                return field(name, "must be finite and >= 0");
            }
        }
        if !LabelMap::is_labeled(self.material_label) {
            return field("label", "255 is reserved for unlabeled pixels");
        }
        Ok(())
    }
}

/// Immutable database with precomputed shape matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDb {
    entries: Vec<SpectralDbEntry>,
    shapes: Vec<ShapeMatrix>,
}

impl SpectralDb {
    pub fn new(entries: Vec<SpectralDbEntry>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(entries.len());
        for e in &entries {
            e.validate()?;
            shapes.push(shape_matrix(&e.spectrum)?);
        }
        Ok(Self { entries, shapes })
    }

    pub fn entries(&self) -> &[SpectralDbEntry] {
        &self.entries
    }

    pub fn shapes(&self) -> &[ShapeMatrix] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One more than the largest material label.
    pub fn classes(&self) -> usize {
        self.entries.iter().map(|e| e.material_label as usize + 1).max().unwrap_or(0)
    }

    pub fn header() -> Vec<String> {
        DB_FIELDS
            .iter()
            .map(|s| s.to_string())
            .chain((0..N_BANDS).map(|b| format!("r{}", BandGrid.wavelength(b))))
            .collect()
    }

    /// Reads the database CSV. The spectral columns must be exactly
    /// `r400..r700` in 10 nm steps; other grids are rejected.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let table = Table::parse(text, "spectral db")?;
        table.expect_header(&Self::header(), "spectral db")?;
        let mut entries = Vec::with_capacity(table.rows.len());
        for (r, row) in table.rows.iter().enumerate() {
            let label_cell = &row[1];
            let material_label: u8 = label_cell
                .parse()
                .map_err(|_| Error::format("label", format!("row {}: `{label_cell}` is not a class id", r + 1)))?;
            let mut spectrum = [0.0; N_BANDS];
            for (b, v) in spectrum.iter_mut().enumerate() {
                *v = table.number(r, DB_FIELDS.len() + b)?;
            }
            entries.push(SpectralDbEntry {
                id: row[0].clone(),
                spectrum,
                specularity: table.number(r, 2)?,
                roughness: table.number(r, 3)?,
                photopic_reflectance: table.number(r, 4)?,
                melanopic_reflectance: table.number(r, 5)?,
                material_label,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::format("spectral db", format!("{}: {e}", path.display())))?;
        Self::parse_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header().join(",");
        out.push('\n');
        for e in &self.entries {
            let mut cells = vec![
                e.id.clone(),
                e.material_label.to_string(),
                fmt_exact(e.specularity),
                fmt_exact(e.roughness),
                fmt_exact(e.photopic_reflectance),
                fmt_exact(e.melanopic_reflectance),
            ];
            cells.extend(e.spectrum.iter().map(|v| fmt_exact(*v)));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Index of the entry whose shape matrix is nearest to `query`, and the
/// distance. Ties go to the lowest index.
pub fn find_match(query: &ShapeMatrix, db: &SpectralDb) -> Result<(usize, f64)> {
    if db.is_empty() {
        return Err(Error::Empty("spectral database has no entries".into()));
    }
    let mut best = (0, query.distance(&db.shapes[0]));
    for (i, s) in db.shapes.iter().enumerate().skip(1) {
        let d = query.distance(s);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// Match result for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub distance: f64,
    pub photopic_reflectance: f64,
    pub specularity: f64,
    pub roughness: f64,
}

impl Observation {
    /// The three values appended to a pixel's features.
    pub fn values(&self) -> [f64; 3] {
        [self.photopic_reflectance, self.specularity, self.roughness]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<Observation>,
}

pub fn match_spectrum(s: &[f64], db: &SpectralDb) -> Result<Observation> {
    let (index, distance) = find_match(&shape_matrix(s)?, db)?;
    let e = &db.entries[index];
    Ok(Observation {
        index,
        distance,
        photopic_reflectance: e.photopic_reflectance,
        specularity: e.specularity,
        roughness: e.roughness,
    })
}

/// Matches every pixel of `h` against `db`.
pub fn attach_observations(h: &SpectralCube, db: &SpectralDb) -> Result<ObservationMap> {
    if db.is_empty() {
        return Err(Error::Empty("spectral database has no entries".into()));
    }
    let pixels = (0..h.pixels())
        .into_par_iter()
        .map(|p| match_spectrum(&h.spectrum_at(p), db))
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservationMap {
        height: h.height(),
        width: h.width(),
        pixels,
    })
}

/// `Σ w_λ s_λ / Σ w_λ`.
pub fn weighted_reflectance(spectrum: &[f64], curve: &[f64]) -> Result<f64> {
    if spectrum.len() != curve.len() {
        return Err(Error::Shape(format!(
            "spectrum has {} bands, weighting curve {}",
            spectrum.len(),
            curve.len()
        )));
    }
    if curve.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain("weighting curve must be finite and >= 0".into()));
    }
    let total: f64 = curve.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateRange("weighting curve is all zero".into()));
    }
    Ok(spectrum.iter().zip(curve).map(|(s, w)| s * w).sum::<f64>() / total)
}

/// Reads a `wavelength,weight` curve on the band grid.
pub fn parse_weighting_curve(text: &str) -> Result<Spectrum> {
    let table = Table::parse(text, "weighting curve")?;
    table.expect_header(&["wavelength".to_string(), "weight".to_string()], "weighting curve")?;
    BandGrid.check(&table.column(0)?)?;
    let w = table.column(1)?;
    if w.iter().any(|v| *v < 0.0) {
        return Err(Error::format("weight", "must be >= 0"));
    }
    let mut out = [0.0; N_BANDS];
    out.copy_from_slice(&w);
    Ok(out)
}

pub fn load_weighting_curve(path: &Path) -> Result<Spectrum> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::format("weighting curve", format!("{}: {e}", path.display())))?;
    parse_weighting_curve(&text)
}

/// Bundled photopic weighting (a smooth synthetic stand-in).
pub fn photopic_curve() -> Spectrum {
    parse_weighting_curve(PHOTOPIC).expect("bundled photopic curve is valid")
}

/// Bundled melanopic weighting (a smooth synthetic stand-in).
pub fn melanopic_curve() -> Spectrum {
    parse_weighting_curve(MELANOPIC).expect("bundled melanopic curve is valid")
}
