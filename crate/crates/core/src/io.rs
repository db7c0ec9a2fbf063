//! Delimited matrix files (rows = samples, columns = variables) and JSON output.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }

    fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableFormat {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for TableFormat {
    fn default() -> Self {
        TableFormat { delimiter: b',', has_header: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    /// `samples × columns`, as stored on disk.
    pub rows: Matrix,
}

impl Table {
    /// Variables as rows, samples as columns.
    pub fn to_variables(&self) -> Matrix {
        self.rows.t().to_owned()
    }

    /// Resolves a column by header name, or by zero-based index.
    pub fn column_index(&self, key: &str) -> Option<usize> {
        if let Some(h) = &self.header {
            if let Some(i) = h.iter().position(|c| c == key) {
                return Some(i);
            }
        }
        key.parse::<usize>().ok().filter(|&i| i < self.rows.ncols())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map(|p| format!(" (line {})", p.line())).unwrap_or_default();
    IoError::format(path, format!("{e}{line}"))
}

pub fn read_table(path: &Path, fmt: TableFormat) -> Result<Table, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(fmt.delimiter)
        .has_headers(fmt.has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = if fmt.has_header {
        let h = reader.headers().map_err(|e| csv_error(path, e))?;
        Some(h.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };
    let mut data = Vec::new();
    let mut n_rows = 0;
    let mut n_cols = header.as_ref().map(Vec::len);
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if *n_cols.get_or_insert(record.len()) != record.len() {
            return Err(IoError::format(
                path,
                format!("line {line}: expected {} fields, found {}", n_cols.unwrap_or(0), record.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                IoError::format(path, format!("line {line}, column {}: not a number: {field:?}", j + 1))
            })?;
            if !v.is_finite() {
                return Err(IoError::format(path, format!("line {line}, column {}: non-finite value", j + 1)));
            }
            data.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(IoError::format(path, "no data rows"));
    }
    let rows = Array2::from_shape_vec((n_rows, n_cols.unwrap_or(0)), data)
        .map_err(|e| IoError::format(path, e.to_string()))?;
    Ok(Table { header, rows })
}

/// Reads a matrix file and returns it as `variables × samples`.
pub fn read_variables(path: &Path, fmt: TableFormat) -> Result<Matrix, IoError> {
    Ok(read_table(path, fmt)?.to_variables())
}

/// Writes `variables × samples` data as rows of samples with a `{prefix}{j}` header.
pub fn write_variables(
    path: &Path,
    data: ArrayView2<f64>,
    prefix: &str,
    fmt: TableFormat,
) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = csv::WriterBuilder::new().delimiter(fmt.delimiter).from_writer(file);
    let wrap = |e: csv::Error| csv_error(path, e);
    if fmt.has_header {
        w.write_record((0..data.nrows()).map(|j| format!("{prefix}{j}")))
            .map_err(wrap)?;
    }
    for sample in data.columns() {
        // Display for f64 is the shortest string that parses back exactly
        w.write_record(sample.iter().map(|v| v.to_string())).map_err(wrap)?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e.to_string()))?;
    text.push('\n');
    let mut file = File::create(path).map_err(|e| IoError::file(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| IoError::file(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| IoError::format(path, e.to_string()))
}

/// Checks that `path` is an existing regular file.
pub fn require_file(path: &Path) -> Result<(), IoError> {
    match std::fs::metadata(path) {
        Ok(m) if m.is_file() => Ok(()),
        Ok(_) => Err(IoError::format(path, "not a regular file")),
        Err(e) => Err(IoError::file(path, e)),
    }
}

/// Creates `dir` if needed and checks that it accepts new files.
pub fn prepare_output_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let probe = dir.join(".regmva-write-probe");
    File::create(&probe).map_err(|e| IoError::file(dir, e))?;
    std::fs::remove_file(&probe).map_err(|e| IoError::file(&probe, e))
}
