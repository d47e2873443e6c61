//! CSV datasets, JSON configs and result files.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a saved
//! dataset reloads bit-for-bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, ExperimentResult};
use crate::problem::RegressionProblem;

/// Response column, by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    fn resolve(&self, header: &[String]) -> Result<usize> {
        match self {
            ColumnRef::Name(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone())),
            ColumnRef::Index(i) if *i < header.len() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::MissingColumn(format!(
                "index {i} (file has {} columns)",
                header.len()
            ))),
        }
    }
}

/// A numeric table split into response and predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y_name: Option<String>,
    pub x_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn into_problem(self) -> Result<RegressionProblem> {
        let y = self
            .y
            .ok_or_else(|| Error::InvalidArgument("dataset has no response column".into()))?;
        RegressionProblem::new(self.x, y)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads a headed numeric CSV. The `y` column, when given, becomes the
/// response and every other column a predictor, in header order.
///
/// Parse errors report one-based file coordinates: the header is line 1.
pub fn load_dataset(path: &Path, y: Option<&ColumnRef>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(Error::Parse {
            row: 1,
            col: 1,
            message: "empty header".into(),
        });
    }
    let y_idx = y.map(|c| c.resolve(&header)).transpose()?;

    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        for (c, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Parse {
                    row: line,
                    col: c + 1,
                    message: "empty cell".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: c + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: line, col: c + 1 });
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = header.len();
    let table = DMatrix::from_row_slice(rows, cols, &values);
    let x_cols: Vec<usize> = (0..cols).filter(|&j| Some(j) != y_idx).collect();
    Ok(Dataset {
        y_name: y_idx.map(|j| header[j].clone()),
        x_names: x_cols.iter().map(|&j| header[j].clone()).collect(),
        x: crate::linalg::select_columns(&table, &x_cols),
        y: y_idx.map(|j| table.column(j).into_owned()),
    })
}

/// Reads a headed numeric CSV into a regression problem.
pub fn load_csv(path: &Path, y: &ColumnRef) -> Result<RegressionProblem> {
    load_dataset(path, Some(y))?.into_problem()
}

/// Writes `y` (if any) followed by the columns of `x`, with the given names.
pub fn save_dataset_csv(
    path: &Path,
    y_name: Option<&str>,
    y: Option<&DVector<f64>>,
    x_names: &[String],
    x: &DMatrix<f64>,
) -> Result<()> {
    if x_names.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} names for {} columns",
            x_names.len(),
            x.ncols()
        )));
    }
    if let Some(y) = y {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "y has length {} but X has {} rows",
                y.len(),
                x.nrows()
            )));
        }
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<&str> = Vec::with_capacity(x.ncols() + 1);
    if y.is_some() {
        header.push(y_name.unwrap_or("y"));
    }
    header.extend(x_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..x.nrows() {
        rec.clear();
        if let Some(y) = y {
            rec.push(y[i].to_string());
        }
        rec.extend((0..x.ncols()).map(|j| x[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Default predictor names `x1, …, xp`.
pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Writes a problem as `y,x1,…,xp`.
pub fn save_problem_csv(path: &Path, problem: &RegressionProblem) -> Result<()> {
    save_dataset_csv(
        path,
        Some("y"),
        Some(problem.y()),
        &default_names(problem.p()),
        problem.x(),
    )
}

/// Pretty JSON with a trailing newline; key order follows the struct
/// declaration.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(to_json_string(value)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses an experiment config; unknown keys are rejected.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Writes a result table; see [`ExperimentResult::write_csv`].
pub fn write_result_csv(path: &Path, result: &ExperimentResult, timing: bool) -> Result<()> {
    result.write_csv(create(path)?, timing)
}
