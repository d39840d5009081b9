//! Experiment reports and their JSON/CSV/manifest serializations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::moments::Moments;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_SCHEMA_LINE: &str = "# ssglab raw values, schema 1";
pub const CSV_HEADER: &str = "replication,t,statistic,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Too few replications for the test to be meaningful.
    Insufficient,
}

/// One attempt of a statistical test under one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub seed: u64,
    /// Test statistic (KS distance, z-score, relative gap, slope, ...).
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub name: String,
    pub rule: String,
    pub status: Status,
    pub attempts: Vec<Attempt>,
}

impl TestOutcome {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Summary of one statistic at one `(n, t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub statistic: String,
    pub n: usize,
    pub t: f64,
    pub moments: Moments,
    /// Deterministic reference values keyed by name.
    pub oracles: BTreeMap<String, f64>,
}

/// Cross-moment of two statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSummary {
    pub statistic: String,
    pub n: usize,
    pub t1: f64,
    pub t2: f64,
    pub covariance: f64,
    pub se_covariance: f64,
    pub correlation: f64,
    pub se_correlation: f64,
    pub oracles: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawRecord {
    pub replication: usize,
    pub t: f64,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: BTreeMap<&'static str, String>,
    pub constants: BTreeMap<String, f64>,
    pub points: Vec<PointSummary>,
    pub pairs: Vec<PairSummary>,
    pub tests: Vec<TestOutcome>,
    pub status: Status,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
    #[serde(skip)]
    pub raw: Vec<RawRecord>,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            experiment: config.kind.tag().to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            config: config.canonical(),
            constants: BTreeMap::new(),
            points: Vec::new(),
            pairs: Vec::new(),
            tests: Vec::new(),
            status: Status::Pass,
            warnings: Vec::new(),
            runtime_seconds: None,
            raw: Vec::new(),
        }
    }

    /// `Fail` if any test failed, otherwise `Insufficient` if any test could
    /// not be run, otherwise `Pass`.
    pub fn finalize_status(&mut self) {
        self.status = if self.tests.iter().any(|t| t.status == Status::Fail) {
            Status::Fail
        } else if self.tests.iter().any(|t| t.status == Status::Insufficient) {
            Status::Insufficient
        } else {
            Status::Pass
        };
    }

    pub fn test(&self, name: &str) -> Option<&TestOutcome> {
        self.tests.iter().find(|t| t.name == name)
    }

    pub fn point(&self, statistic: &str, n: usize, t: f64) -> Option<&PointSummary> {
        self.points
            .iter()
            .find(|p| p.statistic == statistic && p.n == n && p.t == t)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * self.raw.len() + 64);
        s.push_str(CSV_SCHEMA_LINE);
        s.push('\n');
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.raw {
            let _ = writeln!(s, "{},{},{},{:e}", r.replication, r.t, r.statistic, r.value);
        }
        s
    }

    /// Writes `report.json`, `raw.csv` and `manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<OutputPaths> {
        fs::create_dir_all(dir)?;
        let paths = OutputPaths {
            json: dir.join("report.json"),
            csv: dir.join("raw.csv"),
            manifest: dir.join("manifest.txt"),
        };
        fs::write(&paths.json, self.to_json())?;
        fs::write(&paths.csv, self.to_csv())?;
        fs::write(&paths.manifest, manifest_text(config))?;
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// A manifest is a config file with provenance comments.
pub fn manifest_text(config: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# ssglab manifest");
    let _ = writeln!(s, "# ssglab_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# schema_version = {SCHEMA_VERSION}");
    let _ = writeln!(s, "# config_hash = {}", config.hash());
    s.push_str(&config.to_text());
    s
}
