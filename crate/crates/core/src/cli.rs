//! Command-line front end. Exit codes: 0 pass, 2 test failure, 1 usage or
//! configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::covariance::inequality_audit;
use crate::error::{Error, Result};
use crate::hermite::odd_power_coeffs;
use crate::montecarlo::config::{ExperimentConfig, ExperimentKind};
use crate::montecarlo::report::{ExperimentReport, Status, SCHEMA_VERSION};
use crate::montecarlo::run_experiment;
use crate::process::{hypothesis_audit, log_grid, parse_number, ProcessModel};
use crate::quadrature::{format_rational, SymmetricMeasure};
use crate::statistics::{
    exact_cross_moment_vn, sigma_ell_series, sigma_series_unchecked, DEFAULT_ORACLE_CAP, DEFAULT_SIGMA_REL_TOL,
};

// Writes to stdout that ignore a closed pipe instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ssglab",
    version,
    about = "Exact oracles and Monte Carlo experiments for self-similar Gaussian processes",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quadrature order and kappa constants, sigma_ell^2, odd-power Hermite coefficients.
    Constants(ConstantsArgs),
    /// Simulate paths and write them as CSV.
    Simulate(ExperimentArgs),
    /// Odd power variations against the exact and limit variances.
    Variations(ExperimentArgs),
    /// Symmetric Riemann sums in the critical regime against the limit Z.
    Ito(ExperimentArgs),
    /// Residual decay over a mesh ladder above the critical regime.
    Converge(ExperimentArgs),
    /// Hypothesis checks on phi and the covariance inequality audits.
    Audit(AuditArgs),
    /// Exact E[V_n(t)^2] over a mesh ladder, as CSV.
    Oracle(OracleArgs),
    /// Re-run an experiment from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    /// What to print: all, measure, sigma or hermite.
    #[arg(default_value = "all")]
    pub what: String,
    #[arg(long, default_value = "trapezoid")]
    pub measure: String,
    /// Process model for sigma_ell^2, e.g. fbm:H=1/6.
    #[arg(long)]
    pub model: Option<String>,
    /// Order ell; defaults to the order of the measure.
    #[arg(long)]
    pub ell: Option<u32>,
    /// Hermite coefficient row r; defaults to ell.
    #[arg(long)]
    pub r: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_SIGMA_REL_TOL)]
    pub rel_tol: f64,
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub measure: Option<String>,
    /// sin, cos, xexp, linear, cube or poly:c0,c1,...
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long)]
    pub ell: Option<u32>,
    /// Mesh n, or a comma-separated ladder.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long, short = 'T')]
    pub horizon: Option<String>,
    /// Comma-separated evaluation times.
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long, short = 'M')]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for report.json, raw.csv and manifest.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Omit wall-clock runtime so reports are byte-reproducible.
    #[arg(long)]
    pub deterministic: Option<bool>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub p_blocks: Option<usize>,
    #[arg(long)]
    pub quad_nodes: Option<usize>,
    #[arg(long)]
    pub max_increments: Option<usize>,
    /// Any config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value = "64,128,256,512,1024,2048,4096")]
    pub n: String,
    #[arg(long, short = 'T', default_value = "1")]
    pub horizon: String,
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
    /// Write the JSON report and a manifest into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 1)]
    pub ell: u32,
    #[arg(long, default_value = "256,1024,4096")]
    pub n: String,
    #[arg(long, default_value = "1")]
    pub t: String,
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    pub cap: usize,
    /// Write oracle.csv and a manifest into this directory instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Constants(a) => constants(a),
        Command::Simulate(a) => experiment(ExperimentKind::Simulate, a),
        Command::Variations(a) => experiment(ExperimentKind::Variations, a),
        Command::Ito(a) => experiment(ExperimentKind::Ito, a),
        Command::Converge(a) => experiment(ExperimentKind::Converge, a),
        Command::Audit(a) => audit(a),
        Command::Oracle(a) => oracle(a),
        Command::Replay(a) => replay(a),
    }
}

fn hash_lines(lines: &[(&str, String)]) -> String {
    let text: String = lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn manifest_for(lines: &[(&str, String)]) -> String {
    let mut s = String::from("# ssglab manifest\n");
    let _ = writeln!(s, "# ssglab_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# config_hash = {}", hash_lines(lines));
    for (k, v) in lines {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn parse_list<T, F: Fn(&str) -> Result<T>>(s: &str, f: F) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(f).collect()
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Config(format!("'{s}' is not a non-negative integer")))
}

fn constants(a: ConstantsArgs) -> Result<i32> {
    let measure: SymmetricMeasure = a.measure.parse()?;
    let what = a.what.as_str();
    if !matches!(what, "all" | "measure" | "sigma" | "hermite") {
        return Err(Error::Config(format!("unknown constants selector '{what}'")));
    }
    let m_ell = measure.ell()?;
    let ell = a.ell.unwrap_or(m_ell);
    let mut out = serde_json::Map::new();
    let mut lines = vec![("command", "constants".to_string()), ("measure", measure.spec())];
    out.insert("schema_version".into(), json!(SCHEMA_VERSION));
    if matches!(what, "all" | "measure") {
        let kappas: Vec<Value> = (m_ell..=2 * m_ell)
            .map(|h| {
                json!({
                    "h": h,
                    "exact": measure.kappa_exact(h).map(|r| format_rational(&r)),
                    "value": measure.kappa(h),
                })
            })
            .collect();
        let kappa_exact = measure.kappa_exact(m_ell).map(|r| format_rational(&r));
        out.insert("measure".into(), json!(measure.spec()));
        out.insert("ell".into(), json!(m_ell));
        out.insert(
            "kappa".into(),
            json!(kappa_exact.clone().unwrap_or_else(|| measure.kappa(m_ell).to_string())),
        );
        out.insert("kappa_value".into(), json!(measure.kappa(m_ell)));
        out.insert("kappa_h".into(), Value::Array(kappas));
        if let Some(w) = measure.scope_warning() {
            out.insert("warning".into(), json!(w));
        }
    }
    if matches!(what, "all" | "hermite") {
        let r = a.r.unwrap_or(ell);
        lines.push(("r", r.to_string()));
        let c = odd_power_coeffs(r)?;
        out.insert(
            "hermite".into(),
            json!({
                "r": r,
                "coefficients": c.coeffs.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                "degrees": (0..=r).map(|j| c.degree(j as usize)).collect::<Vec<_>>(),
            }),
        );
    }
    if what == "sigma" || (what == "all" && a.model.is_some()) {
        let spec = a
            .model
            .as_deref()
            .ok_or_else(|| Error::Config("constants sigma needs --model".into()))?;
        let model: ProcessModel = spec.parse()?;
        lines.push(("model", model.spec()));
        lines.push(("ell", ell.to_string()));
        lines.push(("rel_tol", a.rel_tol.to_string()));
        let mut c = sigma_ell_series(&model, ell, a.rel_tol)?;
        if ell == m_ell {
            c.kappa = Some(measure.kappa(ell));
        }
        out.insert("sigma".into(), serde_json::to_value(&c).expect("serializable"));
    }
    out.insert("config_hash".into(), json!(hash_lines(&lines)));
    out.insert("seed".into(), Value::Null);
    outln!("{}", serde_json::to_string_pretty(&Value::Object(out)).expect("json"));
    Ok(EXIT_PASS)
}

/// Builds the experiment config: file, then flags, then SSGLAB_SEED.
pub fn experiment_config(kind: ExperimentKind, a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            // A file without an experiment key takes the subcommand's kind.
            ExperimentConfig::from_text(&format!("experiment = {}\n{text}", kind.tag()))?
        }
        None => ExperimentConfig::new(kind),
    };
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        match v {
            Some(v) => c.set(k, &v),
            None => Ok(()),
        }
    };
    set("model", a.model.clone())?;
    set("measure", a.measure.clone())?;
    set("function", a.function.clone())?;
    set("ell", a.ell.map(|v| v.to_string()))?;
    set("n", a.n.clone())?;
    set("horizon", a.horizon.clone())?;
    set("t", a.t.clone())?;
    set("replications", a.replications.map(|v| v.to_string()))?;
    set("seed", a.seed.map(|v| v.to_string()))?;
    set("workers", a.workers.map(|v| v.to_string()))?;
    set("output", a.out.as_ref().map(|p| p.display().to_string()))?;
    set("cache_dir", a.cache_dir.as_ref().map(|p| p.display().to_string()))?;
    set("deterministic", a.deterministic.map(|v| v.to_string()))?;
    set("alpha", a.alpha.clone())?;
    set("retries", a.retries.map(|v| v.to_string()))?;
    set("p_blocks", a.p_blocks.map(|v| v.to_string()))?;
    set("quad_nodes", a.quad_nodes.map(|v| v.to_string()))?;
    set("max_increments", a.max_increments.map(|v| v.to_string()))?;
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        c.set(k.trim(), v)?;
    }
    if c.kind != kind {
        return Err(Error::Config(format!(
            "config describes a '{}' experiment, not '{}'",
            c.kind.tag(),
            kind.tag()
        )));
    }
    c.apply_env()?;
    if c.output.is_none() {
        c.output = Some(PathBuf::from("ssglab-out").join(kind.tag()));
    }
    Ok(c)
}

fn experiment(kind: ExperimentKind, a: ExperimentArgs) -> Result<i32> {
    let config = experiment_config(kind, &a)?;
    execute(&config)
}

/// Runs a config, writes its outputs and prints a summary.
pub fn execute(config: &ExperimentConfig) -> Result<i32> {
    let report = run_experiment(config)?;
    let dir = config.output.clone().unwrap_or_else(|| PathBuf::from("."));
    let paths = report.write(&dir, config)?;
    print_summary(&report, &paths.json);
    Ok(exit_code(&report))
}

pub fn exit_code(report: &ExperimentReport) -> i32 {
    match report.status {
        Status::Pass => EXIT_PASS,
        Status::Fail | Status::Insufficient => EXIT_FAIL,
    }
}

fn print_summary(report: &ExperimentReport, json_path: &Path) {
    outln!(
        "{} seed={} config_hash={} status={:?}",
        report.experiment,
        report.seed,
        report.config_hash,
        report.status
    );
    for t in &report.tests {
        let last = t.attempts.last();
        outln!(
            "  [{}] {} ({}) statistic={} p={} attempts={}",
            match t.status {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::Insufficient => "n/a",
            },
            t.name,
            t.rule,
            last.map_or("-".into(), |a| format!("{:.6e}", a.statistic)),
            last.and_then(|a| a.p_value).map_or("-".into(), |p| format!("{p:.4}")),
            t.attempts.len()
        );
    }
    for w in &report.warnings {
        outln!("  warning: {w}");
    }
    outln!("  report: {}", json_path.display());
}

fn audit(a: AuditArgs) -> Result<i32> {
    let model: ProcessModel = a.model.parse()?;
    let n_list = parse_list(&a.n, parse_usize)?;
    let horizon = parse_number(&a.horizon)?;
    let lines = vec![
        ("command", "audit".to_string()),
        ("model", model.spec()),
        ("n", a.n.clone()),
        ("horizon", horizon.to_string()),
        ("fd_step", a.fd_step.to_string()),
    ];
    let hyp = hypothesis_audit(&model, &log_grid(6, 8, 1e3), a.fd_step);
    let ineq = inequality_audit(&model, &n_list, horizon)?;
    let pass = hyp.pass && ineq.pass;
    let text = serde_json::to_string_pretty(&json!({
        "schema_version": SCHEMA_VERSION,
        "config_hash": hash_lines(&lines),
        "seed": Value::Null,
        "model": model.spec(),
        "pass": pass,
        "hypotheses": hyp,
        "inequalities": ineq,
    }))
    .expect("json");
    for r in [&hyp, &ineq] {
        for c in &r.checks {
            eprintln!("[{}] {}: {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.note);
        }
    }
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("audit.json"), text + "\n")?;
            fs::write(dir.join("manifest.txt"), manifest_for(&lines))?;
        }
        None => outln!("{text}"),
    }
    Ok(if pass { EXIT_PASS } else { EXIT_FAIL })
}

/// CSV rows `n,t,exact_variance,limit_variance,relative_gap`. The limit
/// columns are left empty when the series for `σ_ℓ²` cannot be evaluated.
pub fn oracle_csv(
    model: &ProcessModel,
    ell: u32,
    n_list: &[usize],
    t: f64,
    cap: usize,
) -> Result<(String, Vec<String>)> {
    let mut warnings = Vec::new();
    let limit = match sigma_ell_series(model, ell, DEFAULT_SIGMA_REL_TOL) {
        Ok(c) => {
            warnings.extend(c.warning.clone());
            Some(c.sigma2 * t.powf(2.0 * model.beta() / model.alpha()))
        }
        // Off the critical regime the series is still finite; report it with a warning.
        Err(e @ Error::Regime { .. }) => {
            let c = sigma_series_unchecked(
                model.alpha(),
                model.beta(),
                model.lambda(),
                ell,
                DEFAULT_SIGMA_REL_TOL,
                None,
            );
            match c {
                Ok(c) => {
                    warnings.push(format!("{e}; limit column uses the series at this alpha"));
                    Some(c.sigma2 * t.powf(2.0 * model.beta() / model.alpha()))
                }
                Err(e2) => {
                    warnings.push(format!("no limit column: {e2}"));
                    None
                }
            }
        }
        Err(e) => {
            warnings.push(format!("no limit column: {e}"));
            None
        }
    };
    let mut s = String::from("n,t,exact_variance,limit_variance,relative_gap\n");
    for &n in n_list {
        let v = exact_cross_moment_vn(model, ell, n, t, t, cap)?;
        match limit {
            Some(l) => {
                let _ = writeln!(s, "{n},{t},{v:e},{l:e},{:e}", (v - l) / l);
            }
            None => {
                let _ = writeln!(s, "{n},{t},{v:e},,");
            }
        }
    }
    Ok((s, warnings))
}

fn oracle(a: OracleArgs) -> Result<i32> {
    let model: ProcessModel = a.model.parse()?;
    let n_list = parse_list(&a.n, parse_usize)?;
    let t = parse_number(&a.t)?;
    let lines = vec![
        ("command", "oracle".to_string()),
        ("model", model.spec()),
        ("ell", a.ell.to_string()),
        ("n", a.n.clone()),
        ("t", t.to_string()),
    ];
    let (csv, warnings) = oracle_csv(&model, a.ell, &n_list, t, a.cap)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let body = format!("# config_hash = {}, seed = none\n{csv}", hash_lines(&lines));
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("oracle.csv"), body)?;
            fs::write(dir.join("manifest.txt"), manifest_for(&lines))?;
        }
        None => out!("{body}"),
    }
    Ok(EXIT_PASS)
}

fn replay(a: ReplayArgs) -> Result<i32> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::Config(format!("{}: {e}", a.manifest.display())))?;
    let mut config = ExperimentConfig::from_text(&text)?;
    config.apply_env()?;
    if let Some(w) = a.workers {
        config.workers = w;
    }
    if let Some(o) = a.out {
        config.output = Some(o);
    }
    execute(&config)
}
