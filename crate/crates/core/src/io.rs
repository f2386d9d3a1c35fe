//! Plain-text numeric files: whitespace-separated matrices, tab-separated
//! tables with a header row, and `key = value` summaries.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Parses whitespace-separated rows. Blank lines and `#` comments are skipped.
pub fn parse_matrix(text: &str, origin: &Path) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| Error::Parse {
                    path: origin.to_path_buf(),
                    msg: format!("line {}: {tok:?}: {e}", lineno + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    matrix_from_rows(&rows).map_err(|msg| Error::Parse {
        path: origin.to_path_buf(),
        msg,
    })
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let Some(first) = rows.first() else {
        return Err("matrix has no rows".into());
    };
    let cols = first.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(format!("row {i} has {} entries, expected {cols}", r.len()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    parse_matrix(&text, path)
}

/// Rows of whitespace-separated values, full round-trip precision.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn format_table(columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = columns.join("\t");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_table(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    fs::write(path, format_table(columns, rows))?;
    Ok(())
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Reads `key = value` lines back, ignoring anything else.
pub fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
