use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    let bytes = writer.into_inner().context("flushing CSV")?;
    write_atomic(path, &bytes)
}

/// `report.csv` -> `report.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// Everything needed to rerun a command and get the same output.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub arguments: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub quadrature_nodes: Option<usize>,
    pub buckets: Option<usize>,
    pub config: serde_json::Value,
    pub notes: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            tool: "abfdr",
            version: env!("CARGO_PKG_VERSION"),
            command,
            arguments: std::env::args().collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            quadrature_nodes: None,
            buckets: None,
            config: serde_json::Value::Null,
            notes: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        self.timings
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 3.5355339059327378, 1e-300, -2.5e10, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(
                mantissa.chars().filter(char::is_ascii_digit).count(),
                17,
                "{s}"
            );
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("a/report.csv")),
            Path::new("a/report.manifest.json")
        );
    }
}
