//! In-memory dataset and its CSV representations.
//!
//! Dataset files carry a header row; column 1 is `y` and columns
//! `2..=p+1` are `x1..xp`. Basis files are headerless `p × d` CSV with 17
//! significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `n` observations of a `p`-vector predictor and a scalar response.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyData("dataset"));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch { context: "dataset response", expected: x.nrows(), found: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// True when every response is exactly ±1.
    pub fn is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == 1.0 || v == -1.0)
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
                other => parse_err(format!("{other:?}")),
            })?;
        let header = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
        if header.is_empty() || &header[0] != "y" {
            return Err(parse_err("first column must be named 'y'".into()));
        }
        let p = header.len() - 1;
        for (j, name) in header.iter().skip(1).enumerate() {
            if name != format!("x{}", j + 1) {
                return Err(parse_err(format!("column {} must be named 'x{}', found '{name}'", j + 2, j + 1)));
            }
        }
        let mut y = Vec::new();
        let mut flat = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            if record.len() != p + 1 {
                return Err(parse_err(format!("row {} has {} fields, expected {}", line + 2, record.len(), p + 1)));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("row {} field {}: '{field}' is not a number", line + 2, j + 1)))?;
                if j == 0 {
                    y.push(v);
                } else {
                    flat.push(v);
                }
            }
        }
        let n = y.len();
        Dataset::new(DMatrix::from_row_slice(n, p, &flat), y)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let mut header = String::from("y");
        for j in 1..=self.p() {
            header.push_str(&format!(",x{j}"));
        }
        writeln!(out, "{header}").map_err(io)?;
        for i in 0..self.n() {
            let mut line = format_g17(self.y[i]);
            for j in 0..self.p() {
                line.push(',');
                line.push_str(&format_g17(self.x[(i, j)]));
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v:.16e}")
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_g17(m[(i, j)])).collect();
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(format!("line {}: '{f}' is not a number", line_no + 1))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(format!("line {} has {} columns, expected {}", line_no + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err("no rows".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}
