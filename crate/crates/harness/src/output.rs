use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{HarnessError, Result};

/// Files written next to an output prefix, e.g. `out/run` becomes
/// `out/run.csv`, `out/run.summary.json` and `out/run.meta.json`.
#[derive(Debug, Default)]
pub struct Artifacts {
    prefix: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(prefix: &Path) -> Result<Self> {
        if prefix.file_name().is_none() {
            return Err(HarnessError::Spec(format!("output_path `{}` has no file name", prefix.display())));
        }
        if let Some(dir) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        Ok(Self {
            prefix: prefix.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, suffix: &str) -> PathBuf {
        let mut s = self.prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    }

    pub fn bytes(&mut self, suffix: &str, data: &[u8]) -> Result<PathBuf> {
        let p = self.path(suffix);
        fs::write(&p, data).map_err(|e| HarnessError::io(&p, e))?;
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, suffix: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.bytes(suffix, &text)
    }

    pub fn csv(&mut self, suffix: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let data = w.into_inner().map_err(|e| HarnessError::Serialize(e.to_string()))?;
        self.bytes(suffix, &data)
    }
}

/// Shortest round-trip text of a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}
