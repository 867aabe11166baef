//! Plain-text output helpers shared by the report writers.

use std::io::Write;

/// Floating point with 17 significant digits, which round-trips every f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Writes a header line and rows of pre-formatted fields.
pub fn write_csv<W: Write>(
    mut out: W,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
