//! RGB spectral response curves with a trainable per-band displacement, and
//! the band-preservation penalty.
//!
//! The displacement is a single vector shared by the three channels. The
//! effective sensitivity of channel `c` at band `λ` is
//! `max(base[c][λ] + displacement[λ], 0)`, and the penalty is
//! `Σ_c Σ_λ base[c][λ] · |displacement[λ]|`, so bands where the standard
//! curves are most sensitive resist displacement the most.

use crate::error::{Error, Result};
use crate::table::{fmt_exact, Table};
use crate::types::{BandGrid, Spectrum, N_BANDS};
use std::path::Path;

const BUNDLED_CURVES: &str = include_str!("../data/standard_curves.csv");

pub const CURVE_HEADER: [&str; 4] = ["wavelength", "r", "g", "b"];

/// 3×31 sensitivity rows (R, G, B).
pub type Matrix3 = [Spectrum; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    base: Matrix3,
    displacement: Spectrum,
}

impl ResponseMatrix {
    pub fn new(base: Matrix3, displacement: Spectrum) -> Result<Self> {
        for (c, row) in base.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::format(
                    CURVE_HEADER[c + 1],
                    "sensitivities must be finite and >= 0",
                ));
            }
            if !row.iter().any(|v| *v > 0.0) {
                return Err(Error::format(
                    CURVE_HEADER[c + 1],
                    "channel has no positive sensitivity",
                ));
            }
        }
        if displacement.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("displacement", "must be finite"));
        }
        Ok(Self { base, displacement })
    }

    /// The bundled synthetic Gaussian curves with zero displacement.
    pub fn standard() -> Self {
        Self::parse_curves(BUNDLED_CURVES).expect("bundled curve file is valid")
    }

    pub fn parse_curves(text: &str) -> Result<Self> {
        let table = Table::parse(text, "curves")?;
        Self::from_table(&table)
    }

    fn from_table(table: &Table) -> Result<Self> {
        let header: Vec<String> = CURVE_HEADER.iter().map(|s| s.to_string()).collect();
        table.expect_header(&header, "curves")?;
        if table.rows.len() != N_BANDS {
            return Err(Error::format(
                "curves",
                format!("expected {N_BANDS} data rows, found {}", table.rows.len()),
            ));
        }
        BandGrid.check(&table.column(0)?)?;
        let mut base = [[0.0; N_BANDS]; 3];
        for (c, row) in base.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = table.number(b, c + 1)?;
                if *v < 0.0 {
                    return Err(Error::format(
                        CURVE_HEADER[c + 1],
                        format!("row {}: negative sensitivity {v}", b + 1),
                    ));
                }
            }
        }
        Self::new(base, [0.0; N_BANDS])
    }

    pub fn base(&self) -> &Matrix3 {
        &self.base
    }

    pub fn displacement(&self) -> &Spectrum {
        &self.displacement
    }

    pub fn with_displacement(&self, displacement: Spectrum) -> Result<Self> {
        Self::new(self.base, displacement)
    }

    pub fn effective_matrix(&self) -> Matrix3 {
        std::array::from_fn(|c| {
            std::array::from_fn(|b| (self.base[c][b] + self.displacement[b]).max(0.0))
        })
    }

    pub fn band_loss(&self) -> f64 {
        band_loss(&self.base, &self.displacement)
    }

    /// Gradient of [`band_loss`](Self::band_loss) with respect to the
    /// displacement; the subgradient at zero is taken as zero.
    pub fn band_loss_gradient(&self) -> Spectrum {
        std::array::from_fn(|b| {
            let weight: f64 = self.base.iter().map(|row| row[b]).sum();
            let d = self.displacement[b];
            if d > 0.0 {
                weight
            } else if d < 0.0 {
                -weight
            } else {
                0.0
            }
        })
    }

    /// Curve CSV of the effective matrix (displacement folded in).
    pub fn to_csv(&self) -> String {
        let eff = self.effective_matrix();
        let mut out = CURVE_HEADER.join(",");
        out.push('\n');
        for b in 0..N_BANDS {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_exact(BandGrid.wavelength(b)),
                fmt_exact(eff[0][b]),
                fmt_exact(eff[1][b]),
                fmt_exact(eff[2][b])
            ));
        }
        out
    }
}

/// Reads a curve CSV: header `wavelength,r,g,b` then 31 rows on the band grid.
pub fn load_standard_curves(path: &Path) -> Result<ResponseMatrix> {
    ResponseMatrix::from_table(&Table::read(path, "curves")?)
}

/// `Σ_c Σ_λ base[c][λ] · |displacement[λ]|` over any band count.
pub fn band_loss(base: &[impl AsRef<[f64]>], displacement: &[f64]) -> f64 {
    base.iter()
        .map(|row| {
            row.as_ref()
                .iter()
                .zip(displacement)
                .map(|(b, d)| b * d.abs())
                .sum::<f64>()
        })
        .sum()
}
