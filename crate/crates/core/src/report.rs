//! CSV/JSON writers shared by the exporters.

use std::io::Write;

use serde::Serializer;

use crate::error::Result;
use crate::linalg::Mat;

/// Serialize non-finite floats as strings (`"inf"`, `"nan"`) instead of null.
pub fn ser_f64_or_str<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

/// Comment lines prefixed with `# `, one per input line.
pub fn write_comment_header<W: Write>(out: &mut W, text: &str) -> Result<()> {
    for line in text.lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

/// Dense matrix as headerless CSV rows with round-trip precision.
pub fn write_matrix_csv<W: Write>(mut out: W, m: &Mat) -> Result<()> {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
