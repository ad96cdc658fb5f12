//! Atomic file output: every artifact is written to a temporary file in the
//! target directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)
            .with_context(|| format!("cannot create a temporary file in {}", self.root.display()))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).with_context(|| format!("cannot write {}", target.display()))?;
        log::debug!("wrote {}", target.display());
        self.written.push(target);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `rows` under `header`; every row must have the header's width.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            anyhow::ensure!(
                row.len() == header.len(),
                "{name}: row width {} != header width {}",
                row.len(),
                header.len()
            );
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
        self.write_bytes(name, &bytes)
    }
}

/// Plain decimal rendering, `inf`/`-inf`/`nan` for non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_are_complete_and_leave_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write_csv("a.csv", &["x", "y"], &[vec!["1".into(), "2".into()]]).unwrap();
        out.write_json("b.json", &[1, 2]).unwrap();
        assert_eq!(std::fs::read_to_string(out.path("a.csv")).unwrap(), "x,y\n1,2\n");
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
        assert!(out.write_csv("c.csv", &["x"], &[vec![]]).is_err());
        assert!(!out.path("c.csv").exists());
    }

    #[test]
    fn non_finite_numbers_are_spelled_out() {
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(0.5), "0.5");
    }
}
