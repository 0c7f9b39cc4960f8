use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Reads a headerless, rectangular numeric CSV.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        cols.get_or_insert(record.len());
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::format(format!(
                    "{}: row {} column {}: {cell:?} is not a number",
                    path.display(),
                    line + 1,
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "{}: row {} column {}: non-finite value",
                    path.display(),
                    line + 1,
                    col + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::format(format!("{}: empty CSV", path.display())))?;
    Ok(DMatrix::from_row_iterator(rows, cols, values))
}

pub fn write_csv_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::write(path, e.into()))?;
    for row in m.row_iter() {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::write(path, e.into()))?;
    }
    writer.flush().map_err(|e| Error::write(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(format!("{}: {e}", path.display()))
    }
}
