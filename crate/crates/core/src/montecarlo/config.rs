//! Experiment configuration: flat `key = value` text with a canonical form.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::covariance::DEFAULT_MAX_INCREMENTS;
use crate::error::{Error, Result};
use crate::functions::SmoothFunction;
use crate::process::{parse_number, ProcessModel};
use crate::quadrature::SymmetricMeasure;

pub const SEED_ENV: &str = "SSGLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Simulate,
    Variations,
    Ito,
    Converge,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Variations => "variations",
            ExperimentKind::Ito => "ito",
            ExperimentKind::Converge => "converge",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "simulate" => Ok(ExperimentKind::Simulate),
            "variations" => Ok(ExperimentKind::Variations),
            "ito" => Ok(ExperimentKind::Ito),
            "converge" => Ok(ExperimentKind::Converge),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: String,
    pub measure: String,
    pub function: String,
    /// Power-variation order; defaults to `ℓ(ν)`.
    pub ell: Option<u32>,
    /// Mesh, or the mesh ladder for convergence runs.
    pub n: Vec<usize>,
    pub horizon: f64,
    pub t_list: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub deterministic: bool,
    /// p-value threshold for distribution tests.
    pub alpha: f64,
    /// Attempts per statistical test (first seed plus derived seeds).
    pub retries: u32,
    pub p_blocks: usize,
    pub quad_nodes: usize,
    pub max_increments: usize,
    /// Standard-error multiple for mean/variance/covariance agreement.
    pub se_factor: f64,
    /// Standard-error multiple for the decorrelation diagnostic.
    pub corr_se_factor: f64,
    /// Relative tolerance for the residual variance against the limit.
    pub var_rel_tol: f64,
    /// Largest admissible `‖residual - Σ_h Φ^h‖₂ / ‖residual‖₂`.
    pub decomposition_tol: f64,
    /// The fitted log-log slope must lie below this value.
    pub slope_max: f64,
}

/// Keys left out of the canonical (hashed) form: they do not change results.
const UNHASHED: [&str; 3] = ["workers", "output", "cache_dir"];

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            model: "fbm:H=1/6".into(),
            measure: "trapezoid".into(),
            function: "sin".into(),
            ell: None,
            n: vec![256],
            horizon: 1.0,
            t_list: vec![1.0],
            replications: 1000,
            seed: 1,
            workers: 0,
            output: None,
            cache_dir: None,
            deterministic: true,
            alpha: 0.01,
            retries: 3,
            p_blocks: 256,
            quad_nodes: 64,
            max_increments: DEFAULT_MAX_INCREMENTS,
            se_factor: 5.0,
            corr_se_factor: 3.0,
            var_rel_tol: 0.15,
            decomposition_tol: 0.5,
            slope_max: -0.2,
        }
    }

    pub fn model(&self) -> Result<ProcessModel> {
        self.model.parse()
    }

    pub fn measure(&self) -> Result<SymmetricMeasure> {
        self.measure.parse()
    }

    pub fn function(&self) -> Result<SmoothFunction> {
        self.function.parse()
    }

    pub fn ell(&self) -> Result<u32> {
        match self.ell {
            Some(l) => Ok(l),
            None => self.measure()?.ell(),
        }
    }

    /// Applies [`SEED_ENV`] when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config("replications must be >= 2".into()));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
            return Err(Error::Config("every n must be >= 2".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.t_list.is_empty() || self.t_list.iter().any(|&t| !(t > 0.0 && t <= self.horizon)) {
            return Err(Error::Config("t values must lie in (0, horizon]".into()));
        }
        if self.retries == 0 {
            return Err(Error::Config("retries must be >= 1".into()));
        }
        if self.p_blocks < 8 {
            return Err(Error::Config("p_blocks must be >= 8".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        self.model()?;
        self.measure()?;
        self.function()?;
        Ok(())
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let canon_model = self.model().map(|m| m.spec()).unwrap_or_else(|_| self.model.clone());
        let canon_measure = self
            .measure()
            .map(|m| m.spec())
            .unwrap_or_else(|_| self.measure.clone());
        let canon_fn = self
            .function()
            .map(|f| f.name().to_string())
            .unwrap_or_else(|_| self.function.clone());
        let mut m = BTreeMap::new();
        m.insert("experiment", self.kind.tag().to_string());
        m.insert("model", canon_model);
        m.insert("measure", canon_measure);
        m.insert("function", canon_fn);
        m.insert("ell", self.ell.map(|l| l.to_string()).unwrap_or_default());
        m.insert("n", self.n.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        m.insert("horizon", self.horizon.to_string());
        m.insert("t", list(&self.t_list));
        m.insert("replications", self.replications.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("workers", self.workers.to_string());
        m.insert(
            "output",
            self.output
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        m.insert(
            "cache_dir",
            self.cache_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        m.insert("deterministic", self.deterministic.to_string());
        m.insert("alpha", self.alpha.to_string());
        m.insert("retries", self.retries.to_string());
        m.insert("p_blocks", self.p_blocks.to_string());
        m.insert("quad_nodes", self.quad_nodes.to_string());
        m.insert("max_increments", self.max_increments.to_string());
        m.insert("se_factor", self.se_factor.to_string());
        m.insert("corr_se_factor", self.corr_se_factor.to_string());
        m.insert("var_rel_tol", self.var_rel_tol.to_string());
        m.insert("decomposition_tol", self.decomposition_tol.to_string());
        m.insert("slope_max", self.slope_max.to_string());
        m
    }

    /// Normalized `key = value` lines for every result-affecting key, sorted.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let mut e = self.entries();
        for k in UNHASHED {
            e.remove(k);
        }
        e
    }

    pub fn canonical_text(&self) -> String {
        self.canonical().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`Self::canonical_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    /// Every key, including the unhashed ones.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let kind = pairs
            .iter()
            .find(|(k, _)| k == "experiment")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(ExperimentKind::Variations);
        let mut c = ExperimentConfig::new(kind);
        for (k, v) in &pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| Error::Config(format!("{key} = '{v}': expected {what}"));
        let uint = |s: &str| s.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let real = |s: &str| parse_number(s).map_err(|_| bad("a number"));
        match key {
            "experiment" => self.kind = v.parse()?,
            "model" => self.model = v.to_string(),
            "measure" => self.measure = v.to_string(),
            "function" => self.function = v.to_string(),
            "ell" => {
                self.ell = if v.is_empty() {
                    None
                } else {
                    Some(v.parse().map_err(|_| bad("a positive integer"))?)
                }
            }
            "n" => self.n = v.split(',').map(|s| uint(s.trim())).collect::<Result<_>>()?,
            "horizon" | "T" => self.horizon = real(v)?,
            "t" => self.t_list = v.split(',').map(|s| real(s.trim())).collect::<Result<_>>()?,
            "replications" | "M" => self.replications = uint(v)?,
            "seed" => self.seed = v.parse().map_err(|_| bad("an unsigned integer"))?,
            "workers" => self.workers = uint(v)?,
            "output" => self.output = (!v.is_empty()).then(|| PathBuf::from(v)),
            "cache_dir" => self.cache_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "deterministic" => self.deterministic = v.parse().map_err(|_| bad("true or false"))?,
            "alpha" => self.alpha = real(v)?,
            "retries" => self.retries = v.parse().map_err(|_| bad("a positive integer"))?,
            "p_blocks" => self.p_blocks = uint(v)?,
            "quad_nodes" => self.quad_nodes = uint(v)?,
            "max_increments" => self.max_increments = uint(v)?,
            "se_factor" => self.se_factor = real(v)?,
            "corr_se_factor" => self.corr_se_factor = real(v)?,
            "var_rel_tol" => self.var_rel_tol = real(v)?,
            "decomposition_tol" => self.decomposition_tol = real(v)?,
            "slope_max" => self.slope_max = real(v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
