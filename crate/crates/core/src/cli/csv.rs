//! Minimal CSV emission: header row, comma separator, `\n` line endings,
//! floats with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampling::Points;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    text: String,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut t = CsvTable::default();
        t.row(header);
        t
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let f = f.as_ref();
            if f.contains([',', '"', '\n']) {
                let _ = write!(self.text, "\"{}\"", f.replace('"', "\"\""));
            } else {
                self.text.push_str(f);
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Coordinate column names `s1..sd, t`.
pub fn coord_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("s{i}")).chain(std::iter::once("t".to_string())).collect()
}

/// Reads a numeric CSV with a header row into points of width `dim`.
pub fn read_points(path: &Path, dim: usize) -> Result<Points> {
    let text = std::fs::read_to_string(path)?;
    let mut pts = Points::new(dim);
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_floats(line).map_err(|e| Error::InvalidConfig(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if row.len() < dim {
            return Err(Error::InvalidConfig(format!(
                "{}:{}: expected {dim} coordinates, got {}",
                path.display(),
                n + 1,
                row.len()
            )));
        }
        pts.push(&row[..dim])?;
    }
    Ok(pts)
}

pub fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| format!("not a number: `{}`", f.trim())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 6.1967e-4, 1e300, -2.5e-310, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn table_layout() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.row(&["1", "x,y"]);
        assert_eq!(t.as_str(), "a,b\n1,\"x,y\"\n");
        assert_eq!(coord_names(2), vec!["s1", "s2", "t"]);
    }
}
