//! Plain-text numeric tables.
//!
//! One row per entity, whitespace-delimited, written with Rust's shortest
//! round-trip float formatting so reading the file back reproduces the
//! exact values. Used to persist observations, ground-truth fields and
//! basis matrices across runs.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub fn write_table(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(|t| t.parse::<f64>()).collect();
        rows.push(row.map_err(|e| {
            Error::input(format!(
                "{}:{}: bad numeric value ({e})",
                path.display(),
                lineno + 1
            ))
        })?);
    }
    Ok(rows)
}

/// Convenience wrappers for single-column tables.
pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    write_table(path, &values.iter().map(|v| vec![*v]).collect::<Vec<_>>())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    read_table(path)?
        .into_iter()
        .map(|row| {
            if row.len() == 1 {
                Ok(row[0])
            } else {
                Err(Error::input(format!(
                    "{}: expected one value per row, found {}",
                    path.display(),
                    row.len()
                )))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.txt");
        let rows = vec![
            vec![1.0, -2.5e-17, std::f64::consts::PI],
            vec![0.1 + 0.2, f64::MIN_POSITIVE, 1e308],
        ];
        write_table(&path, &rows).unwrap();
        assert_eq!(read_table(&path).unwrap(), rows);
    }

    #[test]
    fn vectors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        let v = vec![0.3, -0.7, 42.0];
        write_vector(&path, &v).unwrap();
        assert_eq!(read_vector(&path).unwrap(), v);
    }
}
