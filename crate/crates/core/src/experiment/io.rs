//! CSV tables and atomic file writes.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Column-major numeric table with a header row. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn table_bytes(headers: &[&str], columns: &[&[f64]]) -> io::Result<Vec<u8>> {
    assert_eq!(headers.len(), columns.len());
    let rows = columns.first().map_or(0, |c| c.len());
    assert!(columns.iter().all(|c| c.len() == rows), "ragged table");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers)?;
    for r in 0..rows {
        w.write_record(columns.iter().map(|c| c[r].to_string()))?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn write_table(path: &Path, headers: &[&str], columns: &[&[f64]]) -> io::Result<()> {
    atomic_write(path, &table_bytes(headers, columns)?)
}

/// Reads a table written by [`write_table`]; returns headers and columns.
pub fn read_table(path: &Path) -> io::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io::Error::other(e.to_string()))?;
    let headers: Vec<String> = r
        .headers()
        .map_err(|e| io::Error::other(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut cols = vec![Vec::new(); headers.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| io::Error::other(e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "ragged row"));
        }
        for (c, field) in cols.iter_mut().zip(rec.iter()) {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{field:?}: {e}")))?;
            c.push(v);
        }
    }
    Ok((headers, cols))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
