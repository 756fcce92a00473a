//! Small helpers shared by the plain-text file formats.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits: enough for every f64 to parse back bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str, what: &'static str, path: &Path) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::format(what, path, format!("bad number {s:?}: {e}")))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a file through a buffered writer, mapping every failure to
/// [`Error::Io`] for `path`.
pub fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir_all(parent)?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses `key = value` lines, skipping blanks and `#` comments. Keys keep
/// their order of appearance.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format("key-value line", path, format!("line {}: expected `key = value`", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Writes a dense matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(path: &Path, rows: usize, cols: usize, value: impl Fn(usize, usize) -> f64) -> Result<()> {
    write_with(path, |w| {
        for r in 0..rows {
            for c in 0..cols {
                if c > 0 {
                    w.write_all(b",")?;
                }
                w.write_all(fmt_f64(value(r, c)).as_bytes())?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}
