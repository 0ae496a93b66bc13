//! CSV output with `%.9g`-style numbers that read back exactly as printed.

use std::path::Path;

use crate::error::{Error, Result};

/// Formats like C's `%.9g`.
pub fn format_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Rounding to 9 significant digits decides the exponent.
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Writes a header row and string rows, quoting fields as needed.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_matrix_csv(path: &Path, names: &[String], values: &[Vec<f64>]) -> Result<()> {
    let rows: Vec<Vec<String>> = values
        .iter()
        .map(|r| r.iter().map(|&x| format_g9(x)).collect())
        .collect();
    write_csv(path, names, &rows)
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_err(path, e))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = read_csv(path)?;
    let values = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Config(format!("{}: not a number: {s:?}", path.display())))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        for (x, s) in [
            (0.5, "0.5"),
            (1.0, "1"),
            (0.1 + 0.2, "0.3"),
            (1e-10, "1e-10"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (9.999999999, "10"),
            (1.0 / 3.0, "0.333333333"),
        ] {
            assert_eq!(format_g9(x), s, "{x}");
        }
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let names = vec!["a,b".to_string(), "c".to_string()];
        let values = vec![vec![1.0 / 3.0, 0.25], vec![1e-12, 2.0]];
        write_matrix_csv(&path, &names, &values).unwrap();
        let (h, v) = read_matrix_csv(&path).unwrap();
        assert_eq!(h, names);
        for (r, w) in v.iter().zip(&values) {
            for (x, y) in r.iter().zip(w) {
                assert_eq!(format_g9(*x), format_g9(*y));
            }
        }
    }

    #[test]
    fn one_by_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix_csv(&path, &["P1".to_string()], &[vec![0.5]]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "P1\n0.5\n");
    }
}
