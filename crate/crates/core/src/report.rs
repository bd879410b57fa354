//! CSV and JSON emission.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n', '\r']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Renders a header plus records, LF line endings.
pub fn render_csv(header: &[&str], records: &[Vec<Cell>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for rec in records {
        let row: Vec<String> = rec.iter().map(Cell::render).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn emit_csv(header: &[&str], records: &[Vec<Cell>], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(render_csv(header, records).as_bytes())?;
    Ok(())
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| crate::error::Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_and_one_row() {
        assert_eq!(render_csv(&["a", "b"], &[]), "a,b\n");
        let s = render_csv(&["a", "b"], &[vec![1i64.into(), 0.5.into()]]);
        assert_eq!(s.lines().count(), 2);
        assert_eq!(s, "a,b\n1,5.0000000000000000e-1\n");
    }

    #[test]
    fn text_is_quoted_when_needed() {
        let s = render_csv(&["t"], &[vec!["x,\"y\"".into()]]);
        assert_eq!(s, "t\n\"x,\"\"y\"\"\"\n");
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5, f64::MIN_POSITIVE, 123456789.123456789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
