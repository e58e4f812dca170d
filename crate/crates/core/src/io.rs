//! JSON and CSV plumbing. Matrices travel as row-major nested arrays.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub fn mat_to_nested(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn nested_to_mat(rows: &[Vec<f64>], name: &str) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{name}: ragged rows")));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// serde adapter for `DMatrix<f64>` fields as nested arrays.
pub mod nested {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::Mat;

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        super::mat_to_nested(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::nested_to_mat(&rows, "matrix").map_err(serde::de::Error::custom)
    }
}

/// Same as [`nested`] for `Option<DMatrix<f64>>`.
pub mod nested_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::Mat;

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::mat_to_nested).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.map(|r| super::nested_to_mat(&r, "matrix").map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Formats a float with 17 significant digits, the CSV convention.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Minimal CSV table: a header and rows of already-formatted cells.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| {
            cells
                .iter()
                .map(|c| escape(c))
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(out, "{}", line(&self.header));
        for r in &self.rows {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Joins indices with `;` for CSV cells.
pub fn fmt_index_set(idx: &[usize]) -> String {
    idx.iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(nested_to_mat(&[vec![1.0, 2.0], vec![3.0]], "A").is_err());
    }

    #[test]
    fn csv_escaping() {
        let mut t = CsvTable::new(["a", "b"]);
        t.push(vec!["1,2".into(), "x".into()]);
        assert_eq!(t.to_csv(), "a,b\n\"1,2\",x\n");
    }
}
