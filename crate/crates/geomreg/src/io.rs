//! CSV ingestion and result-table writing.

use std::fs::{self, File};
use std::path::Path;
use std::str::FromStr;

use geomreg_core::data::{Dataset, Target, Task};
use nalgebra::DMatrix;

use crate::error::{CliError, Result};

/// Target column given by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    /// Pure digits are read as an index, anything else as a name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        })
    }
}

fn data_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a comma-separated file into a [`Dataset`].
///
/// The first row is a header when any of its non-target cells fails to parse
/// as a number. Rows and columns in error messages are 1-based and count the
/// header line.
pub fn load_csv(path: &Path, target: &TargetColumn, task: Task) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let Some(first) = rows.first() else {
        return Err(data_error(path, "file contains no rows"));
    };
    let width = first.len();
    if width < 2 {
        return Err(data_error(path, "need at least one feature column and a target column"));
    }

    let index_hint = match target {
        TargetColumn::Index(i) => Some(*i),
        TargetColumn::Name(_) => None,
    };
    let has_header = first
        .iter()
        .enumerate()
        .any(|(j, cell)| Some(j) != index_hint && cell.parse::<f64>().is_err());
    let target_idx = match target {
        TargetColumn::Index(i) => *i,
        TargetColumn::Name(name) => {
            if !has_header {
                return Err(data_error(path, format!("target column `{name}` named but the file has no header")));
            }
            first
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| data_error(path, format!("no column named `{name}` in header")))?
        }
    };
    if target_idx >= width {
        return Err(data_error(path, format!("target column {target_idx} out of range for {width} columns")));
    }

    let offset = usize::from(has_header);
    let body = &rows[offset..];
    if body.is_empty() {
        return Err(data_error(path, "file contains a header but no data rows"));
    }
    let n = body.len();
    let p = width - 1;
    let mut features = DMatrix::zeros(n, p);
    let mut raw_target = Vec::with_capacity(n);
    for (i, row) in body.iter().enumerate() {
        let line = i + offset + 1;
        if row.len() != width {
            return Err(data_error(path, format!("row {line} has {} cells, expected {width}", row.len())));
        }
        let mut col = 0;
        for (j, cell) in row.iter().enumerate() {
            if j == target_idx {
                raw_target.push(cell.as_str());
                continue;
            }
            features[(i, col)] = parse_cell(path, cell, line, j + 1)?;
            col += 1;
        }
    }

    let target = match task {
        Task::Regression => {
            let mut values = Vec::with_capacity(n);
            for (i, cell) in raw_target.iter().enumerate() {
                values.push(parse_cell(path, cell, i + offset + 1, target_idx + 1)?);
            }
            Target::Values(values)
        }
        Task::Classification => {
            let (labels, names) = encode_labels(&raw_target);
            if names.len() < 2 {
                return Err(data_error(path, format!("classification needs at least 2 distinct labels, found {}", names.len())));
            }
            Target::Classes { labels, names }
        }
    };
    let dataset = Dataset::new(features, target)?;
    if has_header {
        let names = first
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target_idx)
            .map(|(_, h)| h.clone())
            .collect();
        Ok(dataset.with_feature_names(names)?)
    } else {
        Ok(dataset)
    }
}

fn parse_cell(path: &Path, cell: &str, row: usize, col: usize) -> Result<f64> {
    let value: f64 = cell
        .parse()
        .map_err(|_| data_error(path, format!("cannot parse `{cell}` as a number at row {row}, column {col}")))?;
    if !value.is_finite() {
        return Err(data_error(path, format!("non-finite value `{cell}` at row {row}, column {col}")));
    }
    Ok(value)
}

/// Maps label text to `0..m` in order of first appearance.
pub fn encode_labels(raw: &[&str]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let labels = raw
        .iter()
        .map(|&s| match names.iter().position(|n| n == s) {
            Some(k) => k,
            None => {
                names.push(s.to_string());
                names.len() - 1
            }
        })
        .collect();
    (labels, names)
}

/// Shortest round-trip decimal form, so identical numbers give identical bytes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_params(params: &[f64]) -> String {
    params.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(";")
}

/// Writes a header plus rows as a comma-separated file.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let csv_err = |e| CliError::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}
