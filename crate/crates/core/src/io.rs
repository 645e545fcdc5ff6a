//! CSV and JSON file IO.
//!
//! Datasets are UTF-8 CSV with a header row (`y1,...,yD` when written here)
//! and one observation per row.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::Path;

/// Column names `y1..yD`.
pub fn series_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|d| format!("y{d}")).collect()
}

/// Writes a matrix with the given header. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_matrix_csv(path: &Path, names: &[impl AsRef<str>], m: &Matrix) -> Result<()> {
    if names.len() != m.cols() {
        return Err(Error::shape(format!("{} column names for {} columns", names.len(), m.cols())));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names.iter().map(|n| n.as_ref()))?;
    let mut rec = Vec::with_capacity(m.cols());
    for i in 0..m.rows() {
        rec.clear();
        rec.extend(m.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::shape(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 1,
                rec.len(),
                names.len()
            )));
        }
        for (j, f) in rec.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Config(format!("{}: row {} column {:?} is not a number: {f:?}", path.display(), i + 1, names[j]))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let m = Matrix::from_vec(rows, names.len(), data)?;
    Ok((names, m))
}

/// Writes a `T × D` dataset with header `y1..yD`.
pub fn write_dataset(path: &Path, data: &Matrix) -> Result<()> {
    write_matrix_csv(path, &series_names(data.cols()), data)
}

/// Reads a `T × D` dataset. Every value must be finite.
pub fn read_dataset(path: &Path) -> Result<Matrix> {
    let (_, m) = read_matrix_csv(path)?;
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Degenerate(format!("{}: no data", path.display())));
    }
    if let Some(k) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(format!(
            "{}: non-finite value at row {} column {}",
            path.display(),
            k / m.cols() + 1,
            k % m.cols() + 1
        )));
    }
    Ok(m)
}

/// Writes serialisable rows as CSV with a header from the field names.
pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}
