//! CSV output with deterministic formatting.

use std::fs;
use std::path::Path;

use quadsqueeze::error::{Result, SimError};

/// 17-significant-digit float cell; NaN cells print literally as `NaN`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> SimError {
    SimError::invalid(format!("{}: {e}", path.display()))
}

/// Write a header row and data rows, comma-separated with a trailing
/// newline. The caller formats the cells (use [`fmt_float`] for floats so
/// output stays byte-reproducible).
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_cells_roundtrip_exactly() {
        for v in [1.0 / 3.0, 0.35, f64::MIN_POSITIVE, -2.75e-17] {
            let parsed: f64 = fmt_float(v).parse().unwrap();
            assert_eq!(parsed, v);
        }
        assert_eq!(fmt_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            &["a".into(), "b".into()],
            &[vec!["1".into(), "2".into()]],
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
    }
}
