//! CSV helpers shared by the track, plan and episode file readers.

use std::path::Path;

use crate::error::{Error, Result};

/// Parses a numeric CSV whose header starts with `expected` columns (extra
/// trailing columns are ignored). Errors carry the 1-based line number.
pub fn read_csv_rows(text: &str, origin: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(origin, 1, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < expected.len() || names[..expected.len()] != *expected {
        return Err(Error::parse(
            origin,
            1,
            format!("expected header `{}`, got `{}`", expected.join(","), names.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(origin, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < expected.len() {
            return Err(Error::parse(origin, line, format!("expected {} fields", expected.len())));
        }
        let row = record
            .iter()
            .take(expected.len())
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::parse(origin, line, format!("`{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
