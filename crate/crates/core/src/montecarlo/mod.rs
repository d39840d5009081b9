//! Replicated experiments: power variations, the Itô formula in law, the
//! in-probability regime, and plain path simulation.

pub mod config;
pub mod ks;
pub mod limit;
pub mod moments;
pub mod report;

use std::collections::BTreeMap;
use std::time::Instant;

pub use config::{ExperimentConfig, ExperimentKind};
pub use ks::{ks_one_sample, ks_statistic, ks_two_sample, KsResult, Reference};
pub use limit::{sample_limit_z, LimitZSampler};
pub use moments::{CrossMoments, Moments};
pub use report::{ExperimentReport, Status, TestOutcome};

use crate::covariance::{cached_factor, GridSpec, IncrementKernel, LowerFactor};
use crate::error::{Error, Result};
use crate::functions::SmoothFunction;
use crate::numerics::{linear_fit, pairwise_sum, standard_normal_cdf, GaussHermite};
use crate::process::ProcessModel;
use crate::quadrature::SymmetricMeasure;
use crate::rng::derive_seed;
use crate::statistics::{
    check_regime, corrector_sum_values, exact_cross_moment_vn, ito_residual_values, limit_variance_z,
    power_variation_increments, sigma_ell_series, LimitConstants, DEFAULT_SIGMA_REL_TOL,
};
use report::{Attempt, PairSummary, PointSummary, RawRecord};

/// Below this many replications statistical tests are reported as
/// insufficient rather than run.
pub const MIN_REPLICATIONS: usize = ks::MIN_KS_SAMPLE;

const LIMIT_SALT: u64 = 0x4c49_4d49_545a;
const RUNG_SALT: u64 = 0x5255_4e47;

/// Seed of attempt `a`: the configured seed first, derived seeds after it.
pub fn attempt_seed(seed: u64, a: u32) -> u64 {
    if a == 0 {
        seed
    } else {
        derive_seed(seed, a as u64)
    }
}

/// Runs the experiment described by `config` on a pool of `config.workers`
/// threads (`0` uses the global pool).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let run = || match config.kind {
        ExperimentKind::Simulate => run_simulation(config),
        ExperimentKind::Variations => run_variation_experiment(config),
        ExperimentKind::Ito => run_ito_experiment(config),
        ExperimentKind::Converge => run_convergence_experiment(config),
    };
    let mut report = if config.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?
    };
    if !config.deterministic {
        report.runtime_seconds = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

fn factor_for(model: &ProcessModel, grid: GridSpec, config: &ExperimentConfig) -> Result<LowerFactor> {
    if grid.n_incr > config.max_increments {
        return Err(Error::GridTooLarge {
            n_incr: grid.n_incr,
            cap: config.max_increments,
        });
    }
    cached_factor(model, grid, config.cache_dir.as_deref())
}

fn prefix_sums(increments: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(increments.len() + 1);
    v.push(0.0);
    let mut acc = 0.0;
    for d in increments {
        acc += d;
        v.push(acc);
    }
    v
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

fn insert_constants(map: &mut BTreeMap<String, f64>, model: &ProcessModel, c: Option<&LimitConstants>) {
    map.insert("beta".into(), model.beta());
    map.insert("alpha".into(), model.alpha());
    map.insert("lambda".into(), model.lambda());
    if let Some(c) = c {
        map.insert("ell".into(), c.ell as f64);
        map.insert("sigma2".into(), c.sigma2);
        map.insert("sigma_truncation_p".into(), c.truncation_p as f64);
        map.insert("sigma_tail_bound".into(), c.tail_bound);
        if let Some(k) = c.kappa {
            map.insert("kappa".into(), k);
        }
    }
}

/// A single statistical decision inside one attempt.
struct Check {
    name: String,
    rule: String,
    statistic: f64,
    p_value: Option<f64>,
    pass: bool,
}

impl Check {
    fn within_se(name: String, value: f64, target: f64, se: f64, factor: f64) -> Self {
        let z = if se > 0.0 {
            (value - target) / se
        } else if value == target {
            0.0
        } else {
            f64::INFINITY
        };
        Check {
            name,
            rule: format!("|z| <= {factor}"),
            statistic: z,
            p_value: None,
            pass: z.abs() <= factor,
        }
    }

    fn ks(name: String, r: KsResult, alpha: f64) -> Self {
        Check {
            name,
            rule: format!("p > {alpha}"),
            statistic: r.statistic,
            p_value: Some(r.p_value),
            pass: r.p_value > alpha,
        }
    }

    fn relative(name: String, value: f64, target: f64, tol: f64) -> Self {
        let gap = if target != 0.0 {
            (value - target).abs() / target.abs()
        } else if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Check {
            name,
            rule: format!("relative gap <= {tol}"),
            statistic: gap,
            p_value: None,
            pass: gap <= tol,
        }
    }
}

struct AttemptOutput {
    points: Vec<PointSummary>,
    pairs: Vec<PairSummary>,
    raw: Vec<RawRecord>,
    checks: Vec<Check>,
}

/// Runs attempts until every check has passed in at least one attempt, or
/// `config.retries` attempts were made. Summaries come from the first attempt.
fn with_retries<F>(config: &ExperimentConfig, report: &mut ExperimentReport, mut attempt: F) -> Result<()>
where
    F: FnMut(u64) -> Result<AttemptOutput>,
{
    if config.replications < MIN_REPLICATIONS {
        let out = attempt(config.seed)?;
        report.points = out.points;
        report.pairs = out.pairs;
        report.raw = out.raw;
        report.tests = out
            .checks
            .into_iter()
            .map(|c| TestOutcome {
                name: c.name,
                rule: format!("{} (needs >= {MIN_REPLICATIONS} replications)", c.rule),
                status: Status::Insufficient,
                attempts: Vec::new(),
            })
            .collect();
        report
            .warnings
            .push("insufficient replications: statistical tests not run".into());
        report.finalize_status();
        return Ok(());
    }
    let mut outcomes: Vec<TestOutcome> = Vec::new();
    for a in 0..config.retries {
        let seed = attempt_seed(config.seed, a);
        let out = attempt(seed)?;
        for c in out.checks {
            let idx = match outcomes.iter().position(|o| o.name == c.name) {
                Some(i) => i,
                None => {
                    outcomes.push(TestOutcome {
                        name: c.name.clone(),
                        rule: c.rule.clone(),
                        status: Status::Fail,
                        attempts: Vec::new(),
                    });
                    outcomes.len() - 1
                }
            };
            let o = &mut outcomes[idx];
            if o.status == Status::Pass {
                continue;
            }
            o.attempts.push(Attempt {
                seed,
                statistic: c.statistic,
                p_value: c.p_value,
                pass: c.pass,
            });
            if c.pass {
                o.status = Status::Pass;
            }
        }
        if a == 0 {
            report.points = out.points;
            report.pairs = out.pairs;
            report.raw = out.raw;
        }
        if outcomes.iter().all(TestOutcome::passed) {
            break;
        }
    }
    report.tests = outcomes;
    report.finalize_status();
    Ok(())
}

fn t_pairs(t_list: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..t_list.len() {
        for j in 0..t_list.len() {
            if t_list[i] < t_list[j] {
                out.push((i, j));
            }
        }
    }
    out
}

/// Path simulation: raw path values plus checks of `Var X_T` and of the first
/// increment covariance against the model.
pub fn run_simulation(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = config.model()?;
    let n = config.n[0];
    let grid = GridSpec::new(n, config.horizon)?;
    let factor = factor_for(&model, grid, config)?;
    let mut report = ExperimentReport::new(config);
    insert_constants(&mut report.constants, &model, None);
    let t_end = grid.n_incr as f64 / n as f64;
    let var_end = model.covariance(t_end, t_end)?;
    let kern = IncrementKernel::new(&model, n, grid.n_incr);
    let cov01 = (grid.n_incr >= 2).then(|| kern.entry(0, 1));
    let reps = config.replications;
    let se_factor = config.se_factor;
    with_retries(config, &mut report, |seed| {
        let paths: Vec<Vec<f64>> = factor.map_replications(seed, reps, |_, incr| prefix_sums(incr));
        let x_end: Vec<f64> = paths.iter().map(|p| p[grid.n_incr]).collect();
        let mo = Moments::of(&x_end);
        let mut oracles = BTreeMap::new();
        oracles.insert("variance".to_string(), var_end);
        let mut checks = vec![Check::within_se(
            "var_X_end".into(),
            mo.variance,
            var_end,
            mo.se_variance,
            se_factor,
        )];
        let mut pairs = Vec::new();
        if let Some(c01) = cov01 {
            let d0: Vec<f64> = paths.iter().map(|p| p[1]).collect();
            let d1: Vec<f64> = paths.iter().map(|p| p[2] - p[1]).collect();
            let cm = CrossMoments::of(&d0, &d1);
            checks.push(Check::within_se(
                "cov_increments_0_1".into(),
                cm.covariance,
                c01,
                cm.se_covariance,
                se_factor,
            ));
            let mut o = BTreeMap::new();
            o.insert("gram".to_string(), c01);
            pairs.push(PairSummary {
                statistic: "dX0*dX1".into(),
                n,
                t1: 0.0,
                t2: 1.0 / n as f64,
                covariance: cm.covariance,
                se_covariance: cm.se_covariance,
                correlation: cm.correlation,
                se_correlation: cm.se_correlation,
                oracles: o,
            });
        }
        let raw = paths
            .iter()
            .enumerate()
            .flat_map(|(r, p)| {
                p.iter().enumerate().map(move |(j, &v)| RawRecord {
                    replication: r,
                    t: j as f64 / n as f64,
                    statistic: "X".into(),
                    value: v,
                })
            })
            .collect();
        Ok(AttemptOutput {
            points: vec![PointSummary {
                statistic: "X".into(),
                n,
                t: t_end,
                moments: mo,
                oracles,
            }],
            pairs,
            raw,
            checks,
        })
    })?;
    Ok(report)
}

/// Odd power variations `V_n(t)` against the exact finite-`n` variance and the
/// limit `σ_ℓ² t^{2β/α}`, a KS test of the standardized variation, and
/// two-time covariances against `σ_ℓ² (t₁ ∧ t₂)^{2β/α}`.
pub fn run_variation_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = config.model()?;
    let ell = config.ell()?;
    let regime_warning = check_regime(&model, ell)?;
    let consts = sigma_ell_series(&model, ell, DEFAULT_SIGMA_REL_TOL)?;
    let n = config.n[0];
    let grid = GridSpec::new(n, config.horizon)?;
    let factor = factor_for(&model, grid, config)?;
    let gamma = 2.0 * model.beta() / model.alpha();
    let t_list = config.t_list.clone();
    let idx: Vec<usize> = t_list.iter().map(|&t| grid.index_of(t)).collect();
    let exact: Vec<f64> = t_list
        .iter()
        .map(|&t| exact_cross_moment_vn(&model, ell, n, t, t, config.max_increments))
        .collect::<Result<_>>()?;
    let pairs_idx = t_pairs(&t_list);
    let exact_cross: Vec<f64> = pairs_idx
        .iter()
        .map(|&(i, j)| exact_cross_moment_vn(&model, ell, n, t_list[i], t_list[j], config.max_increments))
        .collect::<Result<_>>()?;

    let mut report = ExperimentReport::new(config);
    insert_constants(&mut report.constants, &model, Some(&consts));
    report.warnings.extend(regime_warning);
    let (reps, se_factor, alpha) = (config.replications, config.se_factor, config.alpha);
    with_retries(config, &mut report, |seed| {
        let rows: Vec<Vec<f64>> = factor.map_replications(seed, reps, |_, incr| {
            idx.iter()
                .map(|&k| power_variation_increments(&incr[..k], ell))
                .collect()
        });
        let mut points = Vec::new();
        let mut checks = Vec::new();
        for (i, &t) in t_list.iter().enumerate() {
            let col = column(&rows, i);
            let mo = Moments::of(&col);
            let limit = consts.sigma2 * t.powf(gamma);
            let mut oracles = BTreeMap::new();
            oracles.insert("exact_variance".to_string(), exact[i]);
            oracles.insert("limit_variance".to_string(), limit);
            oracles.insert("exact_vs_limit_gap".to_string(), (exact[i] - limit) / limit);
            checks.push(Check::within_se(
                format!("mean_zero@t={t}"),
                mo.mean,
                0.0,
                mo.se_mean,
                se_factor,
            ));
            checks.push(Check::within_se(
                format!("variance_exact@t={t}"),
                mo.variance,
                exact[i],
                mo.se_variance,
                se_factor,
            ));
            if exact[i] > 0.0 && col.len() >= ks::MIN_KS_SAMPLE {
                let z: Vec<f64> = col.iter().map(|v| v / exact[i].sqrt()).collect();
                let r = ks_one_sample(&z, &standard_normal_cdf)?;
                checks.push(Check::ks(format!("ks_normal@t={t}"), r, alpha));
            }
            points.push(PointSummary {
                statistic: "V".into(),
                n,
                t,
                moments: mo,
                oracles,
            });
        }
        let mut pairs = Vec::new();
        for (p, &(i, j)) in pairs_idx.iter().enumerate() {
            let cm = CrossMoments::of(&column(&rows, i), &column(&rows, j));
            let (t1, t2) = (t_list[i], t_list[j]);
            let limit = consts.sigma2 * t1.powf(gamma);
            checks.push(Check::within_se(
                format!("covariance_limit@t={t1},{t2}"),
                cm.covariance,
                limit,
                cm.se_covariance,
                se_factor,
            ));
            let mut oracles = BTreeMap::new();
            oracles.insert("exact_covariance".to_string(), exact_cross[p]);
            oracles.insert("limit_covariance".to_string(), limit);
            pairs.push(PairSummary {
                statistic: "V".into(),
                n,
                t1,
                t2,
                covariance: cm.covariance,
                se_covariance: cm.se_covariance,
                correlation: cm.correlation,
                se_correlation: cm.se_correlation,
                oracles,
            });
        }
        let raw = rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                t_list.iter().zip(row).map(move |(&t, &v)| RawRecord {
                    replication: r,
                    t,
                    statistic: "V".into(),
                    value: v,
                })
            })
            .collect();
        Ok(AttemptOutput {
            points,
            pairs,
            raw,
            checks,
        })
    })?;
    Ok(report)
}

/// Per-replication values of the Itô experiment at one `t`.
struct ItoRow {
    residual: Vec<f64>,
    corrector: Vec<f64>,
    f_x: Vec<f64>,
    x_end: f64,
}

fn ito_row(values: &[f64], idx: &[usize], f: &SmoothFunction, measure: &SymmetricMeasure) -> Result<ItoRow> {
    let mut row = ItoRow {
        residual: Vec::with_capacity(idx.len()),
        corrector: Vec::with_capacity(idx.len()),
        f_x: Vec::with_capacity(idx.len()),
        x_end: *values.last().expect("non-empty path"),
    };
    for &k in idx {
        let v = &values[..=k];
        row.residual.push(ito_residual_values(v, f, measure)?);
        row.corrector.push(corrector_sum_values(v, f, measure)?);
        row.f_x.push(f.value(values[k]));
    }
    Ok(row)
}

/// Symmetric Riemann sums in the critical regime: the residual
/// `f(X_t) - f(0) - S_n^ν(f', t)` against the limit `Z_t` (variance, two-sample
/// KS against direct draws of `Z`), its decorrelation from `f(X_t)`, and the
/// size of what remains after subtracting the correctors.
pub fn run_ito_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = config.model()?;
    let measure = config.measure()?;
    let f = config.function()?;
    let ell = measure.ell()?;
    if let Some(l) = config.ell {
        if l != ell {
            return Err(Error::Config(format!(
                "ell = {l} does not match the measure order {ell}"
            )));
        }
    }
    let regime_warning = check_regime(&model, ell)?;
    f.require_order(8 * ell as usize + 2)?;
    let mut consts = sigma_ell_series(&model, ell, DEFAULT_SIGMA_REL_TOL)?;
    consts.kappa = Some(measure.kappa(ell));
    let n = config.n[0];
    let grid = GridSpec::new(n, config.horizon)?;
    let factor = factor_for(&model, grid, config)?;
    let t_list = config.t_list.clone();
    let idx: Vec<usize> = t_list.iter().map(|&t| grid.index_of(t)).collect();
    let limit_var: Vec<f64> = t_list
        .iter()
        .map(|&t| limit_variance_z(&model, &f, ell, &measure, t, config.quad_nodes))
        .collect::<Result<_>>()?;

    let block_grid = GridSpec::new(config.p_blocks, config.horizon)?;
    let block_factor = factor_for(&model, block_grid, config)?;
    let sampler = LimitZSampler::new(&model, &f, ell, &measure, &t_list, block_factor, block_grid)?;
    let gh = GaussHermite::new(config.quad_nodes);
    let block_var = sampler.exact_variance(&gh);
    let block_var_2p = sampler.exact_variance_refined(&gh);

    let mut report = ExperimentReport::new(config);
    insert_constants(&mut report.constants, &model, Some(&consts));
    report.constants.insert("p_blocks".into(), config.p_blocks as f64);
    report.warnings.extend(regime_warning);
    report.warnings.extend(measure.scope_warning());
    let reps = config.replications;
    with_retries(config, &mut report, |seed| {
        let rows: Vec<ItoRow> = factor
            .map_replications(seed, reps, |_, incr| ito_row(&prefix_sums(incr), &idx, &f, &measure))
            .into_iter()
            .collect::<Result<_>>()?;
        let z_draws = sampler.draw_many(derive_seed(seed, LIMIT_SALT), reps);
        let x_end: Vec<f64> = rows.iter().map(|r| r.x_end).collect();
        let mut points = Vec::new();
        let mut pairs = Vec::new();
        let mut checks = Vec::new();
        for (i, &t) in t_list.iter().enumerate() {
            let res: Vec<f64> = rows.iter().map(|r| r.residual[i]).collect();
            let fx: Vec<f64> = rows.iter().map(|r| r.f_x[i]).collect();
            let rem: Vec<f64> = rows.iter().map(|r| r.residual[i] - r.corrector[i]).collect();
            let z = column(&z_draws, i);
            let mo = Moments::of(&res);
            let mz = Moments::of(&z);
            let rem_m2 = pairwise_sum(&rem.iter().map(|v| v * v).collect::<Vec<_>>()) / reps as f64;

            checks.push(Check::relative(
                format!("variance_limit@t={t}"),
                mo.variance,
                limit_var[i],
                config.var_rel_tol,
            ));
            checks.push(Check::ks(
                format!("ks_limit_draws@t={t}"),
                ks_two_sample(&res, &z)?,
                config.alpha,
            ));
            let decor = if mo.variance > 0.0 && Moments::of(&fx).variance > 0.0 {
                let cm = CrossMoments::of(&res, &fx);
                checks.push(Check::within_se(
                    format!("decorrelation_f@t={t}"),
                    cm.correlation,
                    0.0,
                    cm.se_correlation,
                    config.corr_se_factor,
                ));
                Some(cm)
            } else {
                checks.push(Check {
                    name: format!("decorrelation_f@t={t}"),
                    rule: "degenerate: zero variance".into(),
                    statistic: 0.0,
                    p_value: None,
                    pass: true,
                });
                None
            };
            let ratio = if mo.second_moment > 0.0 {
                (rem_m2 / mo.second_moment).sqrt()
            } else if rem_m2 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            checks.push(Check {
                name: format!("decomposition@t={t}"),
                rule: format!(
                    "||residual - correctors|| / ||residual|| <= {}",
                    config.decomposition_tol
                ),
                statistic: ratio,
                p_value: None,
                pass: ratio <= config.decomposition_tol,
            });
            checks.push(Check::within_se(
                format!("limit_sampler_variance@t={t}"),
                mz.variance,
                block_var[i],
                mz.se_variance,
                config.se_factor,
            ));
            checks.push(Check::relative(
                format!("limit_blocks_stable@t={t}"),
                block_var[i],
                block_var_2p[i],
                0.02,
            ));

            let mut oracles = BTreeMap::new();
            oracles.insert("limit_variance".to_string(), limit_var[i]);
            oracles.insert("block_variance".to_string(), block_var[i]);
            oracles.insert("block_variance_2p".to_string(), block_var_2p[i]);
            oracles.insert("remainder_rms_ratio".to_string(), ratio);
            points.push(PointSummary {
                statistic: "residual".into(),
                n,
                t,
                moments: mo,
                oracles: oracles.clone(),
            });
            points.push(PointSummary {
                statistic: "limit_draw".into(),
                n: config.p_blocks,
                t,
                moments: mz,
                oracles,
            });
            let mut add_pair = |name: &str, cm: CrossMoments| {
                pairs.push(PairSummary {
                    statistic: name.into(),
                    n,
                    t1: t,
                    t2: t,
                    covariance: cm.covariance,
                    se_covariance: cm.se_covariance,
                    correlation: cm.correlation,
                    se_correlation: cm.se_correlation,
                    oracles: BTreeMap::new(),
                })
            };
            if let Some(cm) = decor {
                add_pair("residual~f(X_t)", cm);
            }
            if mo.variance > 0.0 {
                add_pair("residual~X_T", CrossMoments::of(&res, &x_end));
            }
        }
        let mut raw = Vec::with_capacity(reps * t_list.len() * 2);
        for (r, row) in rows.iter().enumerate() {
            for (i, &t) in t_list.iter().enumerate() {
                raw.push(RawRecord {
                    replication: r,
                    t,
                    statistic: "residual".into(),
                    value: row.residual[i],
                });
                raw.push(RawRecord {
                    replication: r,
                    t,
                    statistic: "corrector_sum".into(),
                    value: row.corrector[i],
                });
                raw.push(RawRecord {
                    replication: r,
                    t,
                    statistic: "limit_draw".into(),
                    value: z_draws[r][i],
                });
            }
        }
        Ok(AttemptOutput {
            points,
            pairs,
            raw,
            checks,
        })
    })?;
    Ok(report)
}

/// Above the critical regime the residual vanishes in probability: fits the
/// log-log slope of `E[residual²]` over the mesh ladder.
pub fn run_convergence_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = config.model()?;
    let measure = config.measure()?;
    let f = config.function()?;
    let ell = measure.ell()?;
    let product = model.alpha() * (2 * ell + 1) as f64;
    if product <= 1.0 + crate::statistics::REGIME_WARN_TOL {
        return Err(Error::Regime { ell, product });
    }
    f.require_order(4 * ell as usize + 2)?;
    let mut ladder = config.n.clone();
    ladder.sort_unstable();
    ladder.dedup();
    if ladder.len() < 2 {
        return Err(Error::Config("convergence needs at least two mesh sizes".into()));
    }
    let t = config.t_list.iter().copied().fold(0.0, f64::max);
    let factors: Vec<(GridSpec, LowerFactor)> = ladder
        .iter()
        .map(|&n| {
            let g = GridSpec::new(n, config.horizon)?;
            Ok((g, factor_for(&model, g, config)?))
        })
        .collect::<Result<_>>()?;

    let mut report = ExperimentReport::new(config);
    insert_constants(&mut report.constants, &model, None);
    report.constants.insert("kappa".into(), measure.kappa(ell));
    report.constants.insert("ell".into(), ell as f64);
    let reps = config.replications;
    let slope_max = config.slope_max;
    with_retries(config, &mut report, |seed| {
        let mut points = Vec::new();
        let mut raw = Vec::new();
        let mut m2 = Vec::new();
        for (rung, (grid, factor)) in factors.iter().enumerate() {
            let k = grid.index_of(t);
            let res: Vec<f64> = factor
                .map_replications(derive_seed(seed, RUNG_SALT + rung as u64), reps, |_, incr| {
                    ito_residual_values(&prefix_sums(incr)[..=k], &f, &measure)
                })
                .into_iter()
                .collect::<Result<_>>()?;
            let mo = Moments::of(&res);
            m2.push(mo.second_moment);
            raw.extend(res.iter().enumerate().map(|(r, &v)| RawRecord {
                replication: r,
                t: grid.n as f64,
                statistic: "residual_n".into(),
                value: v,
            }));
            points.push(PointSummary {
                statistic: "residual".into(),
                n: grid.n,
                t,
                moments: mo,
                oracles: BTreeMap::new(),
            });
        }
        let mut checks = Vec::new();
        if m2.iter().all(|&v| v == 0.0) {
            checks.push(Check {
                name: "slope".into(),
                rule: "residual identically zero".into(),
                statistic: f64::NEG_INFINITY,
                p_value: None,
                pass: true,
            });
            checks.push(Check {
                name: "monotone".into(),
                rule: "residual identically zero".into(),
                statistic: 0.0,
                p_value: None,
                pass: true,
            });
        } else {
            let xs: Vec<f64> = ladder.iter().map(|&n| (n as f64).ln()).collect();
            let ys: Vec<f64> = m2.iter().map(|v| v.ln()).collect();
            let (slope, _) = linear_fit(&xs, &ys);
            checks.push(Check {
                name: "slope".into(),
                rule: format!("log-log slope of E[residual^2] < {slope_max}"),
                statistic: slope,
                p_value: None,
                pass: slope < slope_max,
            });
            let worst = m2.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
            checks.push(Check {
                name: "monotone".into(),
                rule: "E[residual^2] strictly decreasing in n (statistic: largest successive ratio)".into(),
                statistic: worst,
                p_value: None,
                pass: worst < 1.0,
            });
        }
        Ok(AttemptOutput {
            points,
            pairs: Vec::new(),
            raw,
            checks,
        })
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.n = vec![64];
        c.replications = 400;
        c.t_list = vec![0.5, 1.0];
        c.seed = 7;
        c
    }

    #[test]
    fn variation_report_is_deterministic_across_workers() {
        let mut c = small(ExperimentKind::Variations);
        c.workers = 1;
        let a = run_experiment(&c).unwrap();
        c.workers = 3;
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.runtime_seconds.is_none());
        assert!(a.point("V", 64, 1.0).is_some());
    }

    #[test]
    fn two_replications_are_insufficient() {
        let mut c = small(ExperimentKind::Variations);
        c.replications = 2;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.status, Status::Insufficient);
        assert!(r.tests.iter().all(|t| t.status == Status::Insufficient));
    }

    #[test]
    fn regime_errors() {
        let mut c = small(ExperimentKind::Variations);
        c.model = "fbm:H=1/4".into();
        assert!(matches!(run_experiment(&c), Err(Error::Regime { .. })));
        let c = small(ExperimentKind::Converge);
        let mut c2 = c.clone();
        c2.n = vec![32, 64];
        assert!(matches!(run_experiment(&c2), Err(Error::Regime { .. })));
    }

    #[test]
    fn linear_function_gives_zero_residuals() {
        let mut c = small(ExperimentKind::Ito);
        c.function = "linear".into();
        c.replications = 50;
        let r = run_experiment(&c).unwrap();
        for p in r.points.iter().filter(|p| p.statistic == "residual") {
            assert_eq!(p.moments.second_moment, 0.0);
        }
        let mut c = small(ExperimentKind::Converge);
        c.model = "fbm:H=1/4".into();
        c.function = "linear".into();
        c.n = vec![32, 64];
        c.replications = 20;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.status, Status::Pass);
    }

    #[test]
    fn simulation_matches_model_variance() {
        let mut c = small(ExperimentKind::Simulate);
        c.replications = 4000;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.status, Status::Pass, "{:?}", r.tests);
        assert_eq!(r.raw.len(), 4000 * 65);
    }
}
