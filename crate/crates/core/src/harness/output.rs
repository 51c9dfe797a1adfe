//! CSV reading and payload hashing.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::fmt_sig;

/// A numeric CSV file: header plus rows of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Strict comma-separated numeric file with a header line.
pub fn read_csv(path: &Path) -> io::Result<CsvTable> {
    parse_csv_text(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Parses CSV text; `source` only labels error messages.
pub fn parse_csv_text(text: &str, source: &str) -> io::Result<CsvTable> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, format!("{source}: {msg}"));
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("line {}: '{s}': {e}", i + 2))))
            .collect::<Result<_, _>>()?;
        if row.len() != header.len() {
            return Err(bad(format!("line {} has {} fields, header has {}", i + 2, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

/// `t,var_p0` for the noiseless reference run.
pub fn write_noiseless_csv<W: Write>(v: &[f64], mut out: W) -> io::Result<()> {
    writeln!(out, "t,var_p0")?;
    for (t, x) in v.iter().enumerate() {
        writeln!(out, "{},{}", t, fmt_sig(*x))?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash over `(name, content)` pairs in the given order.
pub fn payload_digest<'a>(files: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
