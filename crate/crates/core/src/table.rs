//! Small helpers for the plain-text interchange formats: numeric CSV tables
//! and number formatting.

use crate::error::{Error, Result};
use std::path::Path;

/// A parsed CSV with a header row. Lines starting with `#` are comments.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str, what: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::format(what, format!("header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(what, format!("row {}: {e}", i + 1)))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path, what: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::format(what, format!("{}: {e}", path.display())))?;
        Self::parse(&text, what)
    }

    /// Fails unless the header equals `expected`.
    pub fn expect_header(&self, expected: &[String], what: &str) -> Result<()> {
        if self.header != expected {
            return Err(Error::format(
                what,
                format!("header {:?}, expected {:?}", self.header.join(","), expected.join(",")),
            ));
        }
        Ok(())
    }

    /// Numeric cell `(row, col)`, with the column name in errors.
    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        let v: f64 = cell.parse().map_err(|_| {
            Error::format(
                self.header[col].clone(),
                format!("row {}: `{cell}` is not a number", row + 1),
            )
        })?;
        if !v.is_finite() {
            return Err(Error::format(
                self.header[col].clone(),
                format!("row {}: value is not finite", row + 1),
            ));
        }
        Ok(v)
    }

    pub fn column(&self, col: usize) -> Result<Vec<f64>> {
        (0..self.rows.len()).map(|r| self.number(r, col)).collect()
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_exact(v: f64) -> String {
    format!("{v}")
}

/// Plain decimal with 9 significant digits, trailing zeros trimmed (at least
/// one digit after the point is kept).
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0.0".into() } else { format!("{v}") };
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (8 - exponent).clamp(0, 40) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.push('0');
        }
    } else {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(1.0), "1.0");
        assert_eq!(fmt_sig9(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_sig9(20.5), "20.5");
        assert_eq!(fmt_sig9(123456789.4), "123456789.0");
        assert_eq!(fmt_sig9(6.7e-7), "0.00000067");
        assert_eq!(fmt_sig9(-0.25), "-0.25");
        assert_eq!(fmt_sig9(0.0), "0.0");
    }

    #[test]
    fn exact_roundtrips() {
        for v in [0.1, 1.0 / 3.0, 6.02e-9, 12345.678901234] {
            assert_eq!(fmt_exact(v).parse::<f64>().unwrap(), v);
            assert!(!fmt_exact(v).contains('e'));
        }
    }

    #[test]
    fn table_parses_with_comments() {
        let t = Table::parse("# note\na,b\n1,2\n3, 4\n", "t").unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.column(1).unwrap(), vec![2.0, 4.0]);
        let bad = Table::parse("a,b\n1,x\n", "t").unwrap();
        let err = bad.number(0, 1).unwrap_err();
        assert!(err.to_string().contains("b"));
    }
}
