//! Matrix and vector files.
//!
//! Two formats are accepted and detected by content:
//!
//! * text: one matrix row per line, comma separated; blank lines and lines
//!   starting with `#` are ignored. Vectors are written one entry per line.
//! * binary: the 5-byte magic `AMPV1`, the row and column counts as
//!   little-endian `u64`, then the entries as row-major little-endian `f64`.
//!
//! Text output uses the shortest decimal that round-trips to the same `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nnspl::Matrix;

use crate::error::{CliError, Result};

pub const BINARY_MAGIC: &[u8; 5] = b"AMPV1";

/// Shortest round-trip representation of a double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_matrix_text(text: &str, path: &Path) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, tok)| {
                tok.trim().parse::<f64>().map_err(|_| {
                    CliError::parse(path, idx + 1, format!("column {}: not a number: {:?}", col + 1, tok.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::parse(
                    path,
                    idx + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows)?)
}

pub fn parse_matrix_binary(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let bad = |msg: String| CliError::parse(path, 1, msg);
    if bytes.len() < 21 || &bytes[..5] != BINARY_MAGIC {
        return Err(bad("missing AMPV1 header".into()));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes"));
    let count = rows
        .checked_mul(cols)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| bad(format!("dimensions {rows}x{cols} too large")))?;
    let payload = &bytes[21..];
    if Some(payload.len()) != count.checked_mul(8) {
        return Err(bad(format!(
            "{rows}x{cols} needs {} payload bytes, found {}",
            count.saturating_mul(8),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Matrix::from_row_major(rows as usize, cols as usize, data)?)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        return parse_matrix_binary(&bytes, path);
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::parse(path, 1, "not UTF-8 text"))?;
    parse_matrix_text(&text, path)
}

/// Reads a vector stored as a single column or a single row.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.cols() == 1 || m.rows() == 1 || m.rows() * m.cols() == 0 {
        Ok(m.as_slice().to_vec())
    } else {
        Err(CliError::parse(
            path,
            1,
            format!("expected a vector, found a {}x{} matrix", m.rows(), m.cols()),
        ))
    }
}

pub fn matrix_to_text(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_to_binary(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 8 * m.as_slice().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn is_binary_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("bin" | "ampv"))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

/// Writes text unless the extension is `.bin` or `.ampv`.
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    if is_binary_path(path) {
        write_bytes(path, &matrix_to_binary(m))
    } else {
        write_bytes(path, matrix_to_text(m).as_bytes())
    }
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let m = Matrix::from_row_major(v.len(), 1, v.to_vec())?;
    write_matrix(path, &m)
}
