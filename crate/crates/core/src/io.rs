//! Plain-text export helpers.
//!
//! CSV files are comma separated with a header row, `.` as the decimal
//! mark, LF line endings, and floats written with 17 significant digits so
//! that they read back bit-exactly.

use std::io::Write;

/// 17 significant digits in scientific notation; `inf`, `-inf` and `NaN`
/// pass through.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Write a header and rows of already formatted fields.
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

/// `i,y` rows for a measurement vector.
pub fn write_vector_csv<W: Write>(out: W, name: &str, values: &[f64]) -> std::io::Result<()> {
    let rows: Vec<Vec<String>> = values
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), fmt_f64(*v)])
        .collect();
    write_csv(out, &["i", name], &rows)
}

/// Parse the second column of a two-column `i,value` CSV with header.
pub fn read_vector_csv(text: &str) -> Result<Vec<f64>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if header.split(',').count() != 2 {
        return Err(format!("expected a two-column header, got '{header}'"));
    }
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let idx = fields.next().unwrap_or("").trim();
        let val = fields
            .next()
            .ok_or_else(|| format!("line {}: missing value", lineno + 2))?;
        if fields.next().is_some() {
            return Err(format!("line {}: too many fields", lineno + 2));
        }
        let idx: usize = idx
            .parse()
            .map_err(|_| format!("line {}: bad index '{idx}'", lineno + 2))?;
        if idx != values.len() {
            return Err(format!(
                "line {}: expected index {}, got {idx}",
                lineno + 2,
                values.len()
            ));
        }
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|_| format!("line {}: bad number '{}'", lineno + 2, val.trim()))?;
        values.push(v);
    }
    Ok(values)
}
