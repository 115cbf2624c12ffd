//! CSV rendering for every output schema: header row, LF line endings,
//! doubles at 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = String::new();
        for (i, h) in header.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            text.push_str(h.as_ref());
        }
        text.push('\n');
        CsvTable {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let _ = write!(self.text, "{}", fmt_f64(*v));
        }
        self.text.push('\n');
    }

    /// Row of preformatted cells, for integer or flag columns.
    pub fn raw_row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.text.as_bytes())?;
        Ok(())
    }
}

/// `prefix1..prefixN`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// `p11,p12,...,pdd` in row-major order.
pub fn matrix_columns(prefix: &str, d: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(d * d);
    for i in 1..=d {
        for j in 1..=d {
            out.push(format!("{prefix}{i}{j}"));
        }
    }
    out
}

/// Parses a CSV produced by [`CsvTable`] back into header and numeric rows.
pub fn parse(text: &str) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next()?.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: Option<Vec<f64>> = line.split(',').map(|c| c.parse().ok()).collect();
        rows.push(row?);
    }
    Some((header, rows))
}
