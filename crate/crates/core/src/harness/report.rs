use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::Result;

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub q: usize,
    pub e_posterior: f64,
    pub e_u: f64,
    pub e_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub method: String,
    /// Assimilation time for per-time projections.
    pub time: Option<f64>,
    pub values: Vec<f64>,
    pub q_optimal: Option<usize>,
    pub clamped_negatives: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub sweep: Vec<SweepRow>,
    pub spectra: Vec<SpectrumRow>,
    /// `(method, q, q_optimal, correction %)`
    pub corrections: Vec<(String, usize, Option<usize>, f64)>,
    pub provenance: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn e_posterior(&self, method: &str, q: usize) -> Option<f64> {
        self.sweep
            .iter()
            .find(|r| r.method == method && r.q == q)
            .map(|r| r.e_posterior)
    }

    pub fn correction(&self, method: &str) -> Option<f64> {
        self.corrections.iter().find(|c| c.0 == method).map(|c| c.3)
    }

    pub fn q_optimal(&self, method: &str) -> Option<usize> {
        self.spectra
            .iter()
            .find(|s| s.method == method)
            .and_then(|s| s.q_optimal)
    }

    /// Writes the non-empty tables as CSV under `dir` with `prefix`, and
    /// returns the paths written.
    pub fn write_csv(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if !self.sweep.is_empty() {
            let mut s = String::from("method,q,e_posterior,e_u,e_v\n");
            for r in &self.sweep {
                s += &format!(
                    "{},{},{},{},{}\n",
                    r.method,
                    r.q,
                    fmt_f64(r.e_posterior),
                    fmt_f64(r.e_u),
                    fmt_f64(r.e_v)
                );
            }
            written.push(write_file(dir, &format!("{prefix}sweep.csv"), &s)?);
        }
        if !self.spectra.is_empty() {
            let mut s = String::from("method,time,index,value\n");
            let mut q = String::from("method,time,q_optimal,clamped_negatives\n");
            for r in &self.spectra {
                let t = r.time.map(fmt_f64).unwrap_or_default();
                for (i, v) in r.values.iter().enumerate() {
                    s += &format!("{},{t},{},{}\n", r.method, i + 1, fmt_f64(*v));
                }
                let qo = r.q_optimal.map(|v| v.to_string()).unwrap_or_default();
                q += &format!("{},{t},{qo},{}\n", r.method, r.clamped_negatives);
            }
            written.push(write_file(dir, &format!("{prefix}spectra.csv"), &s)?);
            written.push(write_file(dir, &format!("{prefix}q_optimal.csv"), &q)?);
        }
        if !self.corrections.is_empty() {
            let mut s = String::from("method,q,q_optimal,correction_percent\n");
            for (m, qq, qo, c) in &self.corrections {
                let qo = qo.map(|v| v.to_string()).unwrap_or_default();
                s += &format!("{m},{qq},{qo},{}\n", fmt_f64(*c));
            }
            written.push(write_file(dir, &format!("{prefix}table2.csv"), &s)?);
        }
        Ok(written)
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(body.as_bytes())?;
    Ok(path)
}

/// Run record written next to the outputs, in the config format.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub timestamp: u64,
    pub outputs: Vec<String>,
    pub flags: std::collections::BTreeMap<String, String>,
    pub config: toml::Value,
}

impl Manifest {
    pub fn new(command: &str, config: &super::Config) -> Result<Self> {
        let config = toml::Value::try_from(config).map_err(|e| crate::Error::Format(e.to_string()))?;
        Ok(Self {
            command: command.to_string(),
            seed: match &config {
                toml::Value::Table(t) => t.get("seed").and_then(|v| v.as_integer()).unwrap_or(0) as u64,
                _ => 0,
            },
            version: version().to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: Vec::new(),
            flags: Default::default(),
            config,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string(self).map_err(|e| crate::Error::Format(e.to_string()))?;
        write_file(dir, "manifest.toml", &text)
    }
}

/// Crate version plus the `git describe` string captured at build time.
pub fn version() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), "+", env!("OBSCOMP_GIT_DESCRIBE"))
}
