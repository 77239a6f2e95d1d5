//! Output files: a `# key=value` metadata block followed by CSV rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of the JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

/// Sidecar holding wall-clock timings, kept apart so the main file is
/// reproducible.
pub fn timing_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".timing");
    PathBuf::from(s)
}

#[derive(Default)]
pub(crate) struct Document {
    header: Vec<(String, String)>,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
    timings: Vec<(String, f64)>,
}

impl Document {
    pub fn new(kind: &str) -> Self {
        let mut d = Self::default();
        d.meta("format", kind);
        d
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let v = value.to_string().replace('\n', " ");
        self.header.push((key.to_string(), v));
        self
    }

    pub fn columns(&mut self, names: &[&str]) -> &mut Self {
        self.columns = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn row(&mut self, values: Vec<String>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(values);
    }

    pub fn timing(&mut self, label: impl ToString, seconds: f64) {
        self.timings.push((label.to_string(), seconds));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k}={v}");
        }
        if !self.columns.is_empty() {
            let _ = writeln!(out, "{}", self.columns.join(","));
        }
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))?;
        if !self.timings.is_empty() {
            let mut t = String::from("label,seconds\n");
            for (l, s) in &self.timings {
                let _ = writeln!(t, "{l},{s:.3}");
            }
            let tp = timing_path(path);
            std::fs::write(&tp, t).map_err(|e| Error::io(&tp, e))?;
        }
        Ok(())
    }
}

/// Shortest round-trip representation, so files carry exact values.
pub(crate) fn num(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_layout() {
        let mut d = Document::new("test");
        d.meta("seed", 7).columns(&["a", "b"]);
        d.row(vec!["1".into(), num(0.1)]);
        assert_eq!(d.render(), "# format=test\n# seed=7\na,b\n1,0.1\n");
        assert_eq!(timing_path(Path::new("x/out.csv")), PathBuf::from("x/out.csv.timing"));
    }

    #[test]
    fn hash_depends_on_content() {
        assert_eq!(config_hash(&(1, "a")).unwrap(), config_hash(&(1, "a")).unwrap());
        assert_ne!(config_hash(&(1, "a")).unwrap(), config_hash(&(2, "a")).unwrap());
        assert_eq!(config_hash(&1).unwrap().len(), 64);
    }
}
