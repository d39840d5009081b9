//! Path statistics (odd power variations, symmetric Riemann sums, correctors,
//! Itô residuals), the limit constants `σ_ℓ²`, and deterministic oracles.

use astro_float::{BigFloat, Consts, RoundingMode};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{GridSpec, IncrementCovariance, IncrementKernel, PathSample};
use crate::error::{Error, Result};
use crate::functions::SmoothFunction;
use crate::hermite::odd_power_coeffs;
use crate::numerics::{pairwise_sum, GaussHermite, GaussLegendre};
use crate::process::ProcessModel;
use crate::quadrature::SymmetricMeasure;

/// Default cap on `⌊nt⌋` for the exact-variance oracle.
pub const DEFAULT_ORACLE_CAP: usize = 8192;
pub const DEFAULT_SIGMA_REL_TOL: f64 = 1e-12;
/// Above this deviation of `α(2ℓ+1)` from 1 the series is refused.
pub const REGIME_ERROR_TOL: f64 = 1e-6;
/// Above this deviation a warning is attached.
pub const REGIME_WARN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitConstants {
    pub ell: u32,
    pub sigma2: f64,
    /// `κ_{ν,ℓ}` when a measure was supplied.
    pub kappa: Option<f64>,
    pub truncation_p: u64,
    pub tail_bound: f64,
    pub warning: Option<String>,
}

/// `ρ_α(m) = |m+1|^α + |m-1|^α - 2|m|^α`.
pub fn rho_alpha(alpha: f64, m: i64) -> f64 {
    let m = m.unsigned_abs() as f64;
    (m + 1.0).powf(alpha) + (m - 1.0).abs().powf(alpha) - 2.0 * m.powf(alpha)
}

fn factorial_f64(q: u32) -> f64 {
    (1..=q).map(f64::from).product()
}

/// `K_{r,ℓ} = c_{r,ℓ}² 2^{2r} λ^{2ℓ+1} (2(ℓ-r)+1)!`.
pub fn k_coefficient(lambda: f64, r: u32, ell: u32) -> Result<f64> {
    let c = odd_power_coeffs(ell)?.as_f64()[r as usize];
    Ok(c * c * 4f64.powi(r as i32) * lambda.powi(2 * ell as i32 + 1) * factorial_f64(2 * (ell - r) + 1))
}

/// Checks `α = 1/(2ℓ+1)`: an error beyond [`REGIME_ERROR_TOL`], a warning
/// beyond [`REGIME_WARN_TOL`].
pub fn check_regime(model: &ProcessModel, ell: u32) -> Result<Option<String>> {
    let product = model.alpha() * (2 * ell + 1) as f64;
    let dev = (product - 1.0).abs();
    if dev > REGIME_ERROR_TOL {
        Err(Error::Regime { ell, product })
    } else if dev > REGIME_WARN_TOL {
        Ok(Some(format!(
            "alpha (2 ell + 1) = {product} is not exactly 1; the series is evaluated anyway"
        )))
    } else {
        Ok(None)
    }
}

/// `Σ_{p ∈ ℤ} ρ_α(p)^q` truncated at `|p| <= big_p`, summed from the tail inwards.
fn rho_power_sum(alpha: f64, q: u32, big_p: u64) -> f64 {
    let terms: Vec<f64> = (1..=big_p)
        .rev()
        .map(|p| rho_alpha(alpha, p as i64).powi(q as i32))
        .collect();
    rho_alpha(alpha, 0).powi(q as i32) + 2.0 * pairwise_sum(&terms)
}

/// Bound on `Σ_{|p| > P} |ρ_α(p)|^q`, from `|ρ_α(p)| <= α(1-α)(p-1)^{α-2}` for
/// `p >= 2` and `Σ_{m >= P} m^{-s} <= (P-1)^{1-s}/(s-1)`.
fn rho_tail_bound(alpha: f64, q: u32, big_p: u64) -> f64 {
    let s = (2.0 - alpha) * q as f64;
    let c = (alpha * (1.0 - alpha)).powi(q as i32);
    2.0 * c * ((big_p as f64) - 1.0).powf(1.0 - s) / (s - 1.0)
}

pub fn sigma_ell_series(model: &ProcessModel, ell: u32, rel_tol: f64) -> Result<LimitConstants> {
    if ell == 0 {
        return Err(Error::Parameter("ell must be >= 1".into()));
    }
    let warning = check_regime(model, ell)?;
    sigma_series_unchecked(model.alpha(), model.beta(), model.lambda(), ell, rel_tol, warning)
}

/// The truncated series for arbitrary `(α, β, λ)`; no regime check.
pub fn sigma_series_unchecked(
    alpha: f64,
    beta: f64,
    lambda: f64,
    ell: u32,
    rel_tol: f64,
    warning: Option<String>,
) -> Result<LimitConstants> {
    let weights: Vec<(u32, f64)> = (0..ell)
        .map(|r| Ok((2 * (ell - r) + 1, k_coefficient(lambda, r, ell)?)))
        .collect::<Result<_>>()?;
    let prefactor = alpha / (2.0 * beta);
    let mut big_p: u64 = 64;
    loop {
        let sum: f64 = weights
            .iter()
            .map(|&(q, k)| k * rho_power_sum(alpha, q, big_p))
            .sum::<f64>()
            * prefactor;
        let tail: f64 = weights
            .iter()
            .map(|&(q, k)| k * rho_tail_bound(alpha, q, big_p))
            .sum::<f64>()
            * prefactor;
        if tail < rel_tol * sum.abs() {
            return Ok(LimitConstants {
                ell,
                sigma2: sum,
                kappa: None,
                truncation_p: big_p,
                tail_bound: tail,
                warning,
            });
        }
        if big_p > 1 << 40 {
            return Err(Error::Quadrature(format!(
                "sigma series tail {tail:e} above tolerance at P = {big_p}"
            )));
        }
        big_p *= 2;
    }
}

/// `σ_ℓ²` with `κ_{ν,ℓ}` attached; `ℓ` is taken from the measure.
pub fn limit_constants(model: &ProcessModel, measure: &SymmetricMeasure, rel_tol: f64) -> Result<LimitConstants> {
    let ell = measure.ell()?;
    let mut c = sigma_ell_series(model, ell, rel_tol)?;
    c.kappa = Some(measure.kappa(ell));
    Ok(c)
}

fn upto(path: &PathSample, t: f64) -> usize {
    path.grid.index_of(t)
}

/// `V_n(t) = Σ_{j < ⌊nt⌋} (ΔX_{j/n})^{2ℓ+1}`.
pub fn power_variation(path: &PathSample, ell: u32, t: f64) -> f64 {
    power_variation_increments(&path.increments()[..upto(path, t)], ell)
}

pub fn power_variation_increments(increments: &[f64], ell: u32) -> f64 {
    let q = 2 * ell as i32 + 1;
    increments.iter().map(|d| d.powi(q)).sum()
}

/// `S_n^ν(g, t) = Σ_j Σ_i w_i g(X_{j/n} + y_i ΔX_{j/n}) ΔX_{j/n}`.
pub fn riemann_sum<G: Fn(f64) -> f64>(path: &PathSample, g: G, measure: &SymmetricMeasure, t: f64) -> f64 {
    riemann_sum_values(&path.values[..=upto(path, t)], g, measure)
}

pub fn riemann_sum_values<G: Fn(f64) -> f64>(values: &[f64], g: G, measure: &SymmetricMeasure) -> f64 {
    let atoms = measure.atoms();
    values
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let avg: f64 = atoms.iter().map(|a| a.weight * g(w[0] + a.location * d)).sum();
            avg * d
        })
        .sum()
}

/// `Φ_n^h(t) = κ_{ν,h} Σ_j f^{(2h+1)}(X̃_{j/n}) (ΔX_{j/n})^{2h+1}`.
pub fn corrector(path: &PathSample, f: &SmoothFunction, h: u32, measure: &SymmetricMeasure, t: f64) -> Result<f64> {
    corrector_values(&path.values[..=upto(path, t)], f, h, measure)
}

pub fn corrector_values(values: &[f64], f: &SmoothFunction, h: u32, measure: &SymmetricMeasure) -> Result<f64> {
    let order = 2 * h as usize + 1;
    f.require_order(order)?;
    let kappa = measure.kappa(h);
    let s: f64 = values
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            f.eval(order, 0.5 * (w[0] + w[1])) * d.powi(order as i32)
        })
        .sum();
    Ok(kappa * s)
}

/// `f(X_{⌊nt⌋/n}) - f(0) - S_n^ν(f', t)`.
pub fn ito_residual(path: &PathSample, f: &SmoothFunction, measure: &SymmetricMeasure, t: f64) -> Result<f64> {
    ito_residual_values(&path.values[..=upto(path, t)], f, measure)
}

pub fn ito_residual_values(values: &[f64], f: &SmoothFunction, measure: &SymmetricMeasure) -> Result<f64> {
    f.require_order(1)?;
    let last = *values.last().expect("path has at least one value");
    let s = riemann_sum_values(values, |x| f.eval(1, x), measure);
    Ok(f.value(last) - f.value(values[0]) - s)
}

/// `Σ_{h=ℓ}^{2ℓ} Φ_n^h`.
pub fn corrector_sum_values(values: &[f64], f: &SmoothFunction, measure: &SymmetricMeasure) -> Result<f64> {
    let ell = measure.ell()?;
    (ell..=2 * ell).map(|h| corrector_values(values, f, h, measure)).sum()
}

/// Per-`r` weights `c_{r,ℓ}² q_r!` with `q_r = 2(ℓ-r)+1`.
fn chaos_weights(ell: u32) -> Result<Vec<(i32, i32, f64)>> {
    let c = odd_power_coeffs(ell)?.as_f64();
    Ok((0..=ell)
        .map(|r| {
            let q = 2 * (ell - r) + 1;
            (r as i32, q as i32, c[r as usize] * c[r as usize] * factorial_f64(q))
        })
        .collect())
}

#[inline]
fn joint_term(weights: &[(i32, i32, f64)], vj: f64, vk: f64, g: f64) -> f64 {
    let vv = vj * vk;
    weights.iter().map(|&(r, q, w)| w * vv.powi(r) * g.powi(q)).sum()
}

/// `E[V_n(t_1) V_n(t_2)]` computed from Hermite chaos orthogonality,
/// without storing the covariance matrix.
pub fn exact_cross_moment_vn(model: &ProcessModel, ell: u32, n: usize, t1: f64, t2: f64, cap: usize) -> Result<f64> {
    let (t1, t2) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let n1 = (n as f64 * t1 + 1e-9).floor().max(0.0) as usize;
    let n2 = (n as f64 * t2 + 1e-9).floor().max(0.0) as usize;
    if n2 > cap {
        return Err(Error::GridTooLarge { n_incr: n2, cap });
    }
    if n1 == 0 {
        return Ok(0.0);
    }
    let kern = IncrementKernel::new(model, n, n2);
    let var: Vec<f64> = (0..n2).map(|j| kern.variance(j)).collect();
    let weights = chaos_weights(ell)?;
    // Row j < n1 pairs with every k < n2; symmetry folds k < n1 onto k > j.
    let rows: Vec<f64> = (0..n1)
        .into_par_iter()
        .map(|j| {
            let mut terms = Vec::with_capacity(n2 - j);
            terms.push(joint_term(&weights, var[j], var[j], var[j]));
            for k in j + 1..n2 {
                let g = kern.entry(j, k);
                let v = joint_term(&weights, var[j], var[k], g);
                terms.push(if k < n1 { 2.0 * v } else { v });
            }
            pairwise_sum(&terms)
        })
        .collect();
    Ok(pairwise_sum(&rows))
}

/// `E[V_n(t)²]`.
pub fn exact_variance_vn(model: &ProcessModel, ell: u32, n: usize, t: f64) -> Result<f64> {
    exact_cross_moment_vn(model, ell, n, t, t, DEFAULT_ORACLE_CAP)
}

/// `E[V_n(t)²]` from a materialized covariance, over the first `upto` increments.
pub fn exact_variance_from_cov(cov: &IncrementCovariance, ell: u32, upto: usize) -> Result<f64> {
    let weights = chaos_weights(ell)?;
    let rows: Vec<f64> = (0..upto)
        .into_par_iter()
        .map(|j| {
            let terms: Vec<f64> = (0..upto)
                .map(|k| joint_term(&weights, cov.get(j, j), cov.get(k, k), cov.get(j, k)))
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(pairwise_sum(&rows))
}

/// `f(b) - f(a) - (b-a) ∫ f'(a + y(b-a)) ν(dy) - Σ_{h=ℓ}^{2ℓ} κ_{ν,h} f^{(2h+1)}((a+b)/2) (b-a)^{2h+1}`.
pub fn taylor_remainder(f: &SmoothFunction, measure: &SymmetricMeasure, a: f64, b: f64) -> Result<f64> {
    let ell = measure.ell()?;
    f.require_order(4 * ell as usize + 2)?;
    let d = b - a;
    let quad: f64 = measure
        .atoms()
        .iter()
        .map(|at| at.weight * f.eval(1, a + at.location * d))
        .sum();
    let mid = 0.5 * (a + b);
    let corr: f64 = (ell..=2 * ell)
        .map(|h| {
            let o = 2 * h as usize + 1;
            measure.kappa(h) * f.eval(o, mid) * d.powi(o as i32)
        })
        .sum();
    Ok(f.value(b) - f.value(a) - d * quad - corr)
}

const PRECISE_BITS: usize = 384;

fn big_ratio(r: &BigRational, prec: usize) -> BigFloat {
    let rm = RoundingMode::ToEven;
    match (r.numer().to_i128(), r.denom().to_i128()) {
        (Some(n), Some(d)) => BigFloat::from_i128(n, prec).div(&BigFloat::from_i128(d, prec), prec, rm),
        _ => BigFloat::from_f64(crate::quadrature::to_f64(r), prec),
    }
}

fn big_to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().unwrap_or(f64::NAN)
}

/// Local remainder on `[a, a + d]` in extended precision; `None` when `f`
/// has no extended evaluator.
fn local_remainder_big(
    f: &SmoothFunction,
    measure: &SymmetricMeasure,
    ell: u32,
    a: &BigFloat,
    d: &BigFloat,
    cc: &mut Consts,
) -> Option<BigFloat> {
    let p = PRECISE_BITS;
    let rm = RoundingMode::ToEven;
    let atoms: Vec<(BigFloat, BigFloat)> = match measure.exact_atoms() {
        Some(ex) => ex.iter().map(|(y, w)| (big_ratio(y, p), big_ratio(w, p))).collect(),
        None => measure
            .atoms()
            .iter()
            .map(|at| (BigFloat::from_f64(at.location, p), BigFloat::from_f64(at.weight, p)))
            .collect(),
    };
    let b = a.add(d, p, rm);
    let mut quad = BigFloat::from_i32(0, p);
    for (y, w) in &atoms {
        let x = a.add(&y.mul(d, p, rm), p, rm);
        quad = quad.add(&w.mul(&f.eval_big(1, &x, p, cc)?, p, rm), p, rm);
    }
    let mid = a.add(&d.div(&BigFloat::from_i32(2, p), p, rm), p, rm);
    let mut rem = f
        .eval_big(0, &b, p, cc)?
        .sub(&f.eval_big(0, a, p, cc)?, p, rm)
        .sub(&d.mul(&quad, p, rm), p, rm);
    for h in ell..=2 * ell {
        let o = 2 * h as usize + 1;
        let kappa = match measure.kappa_exact(h) {
            Some(k) => big_ratio(&k, p),
            None => BigFloat::from_f64(measure.kappa(h), p),
        };
        let term = kappa
            .mul(&f.eval_big(o, &mid, p, cc)?, p, rm)
            .mul(&d.powi(o, p, rm), p, rm);
        rem = rem.sub(&term, p, rm);
    }
    Some(rem)
}

/// [`taylor_remainder`] evaluated in extended precision, so remainders far
/// below `f64` roundoff stay resolvable. Falls back to `f64` for custom `f`.
pub fn taylor_remainder_precise(f: &SmoothFunction, measure: &SymmetricMeasure, a: f64, b: f64) -> Result<f64> {
    taylor_remainder_composite(f, measure, a, b, 1)
}

/// Sum of the local remainders over `pieces` equal subintervals of `[a, b]`.
pub fn taylor_remainder_composite(
    f: &SmoothFunction,
    measure: &SymmetricMeasure,
    a: f64,
    b: f64,
    pieces: usize,
) -> Result<f64> {
    let ell = measure.ell()?;
    f.require_order(4 * ell as usize + 2)?;
    if pieces == 0 {
        return Err(Error::Parameter("pieces must be positive".into()));
    }
    let p = PRECISE_BITS;
    let rm = RoundingMode::ToEven;
    let mut cc = Consts::new().map_err(|e| Error::Quadrature(format!("extended precision: {e:?}")))?;
    let a_big = BigFloat::from_f64(a, p);
    let d = BigFloat::from_f64(b, p)
        .sub(&a_big, p, rm)
        .div(&BigFloat::from_u64(pieces as u64, p), p, rm);
    let mut total = BigFloat::from_i32(0, p);
    for i in 0..pieces {
        let left = a_big.add(&d.mul(&BigFloat::from_u64(i as u64, p), p, rm), p, rm);
        match local_remainder_big(f, measure, ell, &left, &d, &mut cc) {
            Some(r) => total = total.add(&r, p, rm),
            None => {
                let h = (b - a) / pieces as f64;
                return (0..pieces)
                    .map(|i| taylor_remainder(f, measure, a + i as f64 * h, a + (i + 1) as f64 * h))
                    .sum();
            }
        }
    }
    Ok(big_to_f64(&total))
}

/// Unconditional `Var Z_t = κ² σ_ℓ² ∫_0^t E[f^{(2ℓ+1)}(X_s)²] d(s^{2β/α})`.
///
/// The inner expectation uses Gauss–Hermite with `quad_nodes` nodes and is
/// checked against `2 quad_nodes` nodes; the outer integral runs in the
/// variable `u = s^{2β/α}` over dyadically shrinking panels toward 0.
pub fn limit_variance_z(
    model: &ProcessModel,
    f: &SmoothFunction,
    ell: u32,
    measure: &SymmetricMeasure,
    t: f64,
    quad_nodes: usize,
) -> Result<f64> {
    let m_ell = measure.ell()?;
    if m_ell != ell {
        return Err(Error::Parameter(format!(
            "measure has order {m_ell}, ell = {ell} requested"
        )));
    }
    let order = 2 * ell as usize + 1;
    f.require_order(order)?;
    let consts = sigma_ell_series(model, ell, DEFAULT_SIGMA_REL_TOL)?;
    let kappa = measure.kappa(ell);
    if t <= 0.0 {
        return Ok(0.0);
    }
    let gamma = 2.0 * model.beta() / model.alpha();
    let phi1 = model.phi(1.0)?;
    let two_beta = 2.0 * model.beta();

    let integral = |nodes: usize| -> f64 {
        let gh = GaussHermite::new(nodes);
        let gl = GaussLegendre::new(16);
        let inner = |u: f64| -> f64 {
            let s = u.powf(1.0 / gamma);
            let sd = (s.powf(two_beta) * phi1).sqrt();
            gh.expect(|z| {
                let v = f.eval(order, sd * z);
                v * v
            })
        };
        let top = t.powf(gamma);
        let mut panels = Vec::new();
        let mut hi = top;
        for _ in 0..60 {
            let lo = 0.5 * hi;
            panels.push(gl.integrate(lo, hi, inner));
            hi = lo;
        }
        panels.push(gl.integrate(0.0, hi, inner));
        pairwise_sum(&panels)
    };
    let coarse = integral(quad_nodes);
    let fine = integral(2 * quad_nodes);
    if (coarse - fine).abs() > 1e-6 * fine.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Quadrature(format!(
            "Gauss-Hermite node doubling changed the integral from {coarse} to {fine}"
        )));
    }
    Ok(kappa * kappa * consts.sigma2 * fine)
}

/// Grid for the `⌊nt⌋` prefix of a path.
pub fn prefix_grid(n: usize, t: f64) -> Result<GridSpec> {
    GridSpec::new(n, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::build_increment_covariance;

    fn path(values: Vec<f64>, n: usize) -> PathSample {
        let horizon = (values.len() - 1) as f64 / n as f64;
        PathSample {
            grid: GridSpec::new(n, horizon).unwrap(),
            values,
            seed_id: 0,
        }
    }

    fn wavy(n: usize) -> PathSample {
        let v: Vec<f64> = (0..=n)
            .map(|i| ((i * i) as f64 * 0.37).sin() * 0.8 + 0.01 * i as f64)
            .collect();
        path(v, n)
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho_alpha(1.0 / 3.0, 0), 2.0);
        assert!((rho_alpha(1.0 / 3.0, 1) - (2f64.powf(1.0 / 3.0) - 2.0)).abs() < 1e-15);
        assert!((rho_alpha(1.0 / 3.0, 2) - (-0.077_592)).abs() < 1e-6);
        assert_eq!(rho_alpha(0.4, -3), rho_alpha(0.4, 3));
    }

    #[test]
    fn sigma_fbm_sixth() {
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        assert!((k_coefficient(0.5, 0, 1).unwrap() - 0.75).abs() < 1e-15);
        let c = sigma_ell_series(&m, 1, 1e-12).unwrap();
        assert!((c.sigma2 - 5.39).abs() < 0.01, "{}", c.sigma2);
        assert!(c.tail_bound < 1e-10 * c.sigma2);
        assert!(c.warning.is_none());
        let sub = sigma_ell_series(&ProcessModel::subfractional(1.0 / 6.0).unwrap(), 1, 1e-12).unwrap();
        assert!((sub.sigma2 - c.sigma2).abs() < 1e-12 * c.sigma2);
    }

    #[test]
    fn sigma_truncation_and_scale() {
        let (alpha, beta) = (1.0 / 3.0, 1.0 / 6.0);
        let c = sigma_series_unchecked(alpha, beta, 0.5, 1, 1e-12, None).unwrap();
        let direct = 0.75 * rho_power_sum(alpha, 3, 2 * c.truncation_p);
        assert!((direct - c.sigma2).abs() < 1e-12 * c.sigma2);
        let doubled = sigma_series_unchecked(alpha, beta, 1.0, 1, 1e-12, None).unwrap();
        assert!((doubled.sigma2 / c.sigma2 - 8.0).abs() < 1e-13);
        let c2 = sigma_series_unchecked(0.2, 0.1, 0.5, 2, 1e-12, None).unwrap();
        let d2 = sigma_series_unchecked(0.2, 0.1, 1.0, 2, 1e-12, None).unwrap();
        assert!((d2.sigma2 / c2.sigma2 - 32.0).abs() < 1e-12);
    }

    #[test]
    fn regime_checks() {
        let off = ProcessModel::fbm(0.25).unwrap();
        assert!(matches!(sigma_ell_series(&off, 1, 1e-12), Err(Error::Regime { .. })));
        let near = ProcessModel::fbm(1.0 / 6.0 + 1e-9).unwrap();
        assert!(sigma_ell_series(&near, 1, 1e-12).unwrap().warning.is_some());
        let rounded = ProcessModel::fbm(0.16667).unwrap();
        assert!(sigma_ell_series(&rounded, 1, 1e-12).is_err());
    }

    #[test]
    fn power_variation_basics() {
        let p = wavy(16);
        assert_eq!(power_variation(&p, 1, 0.5 / 16.0), 0.0);
        assert!((power_variation(&p, 0, 0.5) - p.values[8]).abs() < 1e-14);
        let c = path((0..=10).map(|i| 0.3 * i as f64).collect(), 10);
        assert!((power_variation(&c, 1, 1.0) - 10.0 * 0.3f64.powi(3)).abs() < 1e-14);
    }

    #[test]
    fn riemann_sum_identities() {
        let p = wavy(32);
        let trap = SymmetricMeasure::trapezoid();
        let s = riemann_sum(&p, |x| x.cos(), &trap, 1.0);
        let manual: f64 = p
            .values
            .windows(2)
            .map(|w| 0.5 * (w[0].cos() + w[1].cos()) * (w[1] - w[0]))
            .sum();
        assert!((s - manual).abs() < 1e-13);
        assert!((riemann_sum(&p, |_| 1.0, &trap, 1.0) - p.values[32]).abs() < 1e-13);
        for m in [
            SymmetricMeasure::simpson(),
            SymmetricMeasure::milne(),
            SymmetricMeasure::midpoint(),
        ] {
            let s = riemann_sum(&p, |x| 2.0 * x, &m, 0.75);
            assert!((s - p.values[24].powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn corrector_and_residual_basics() {
        let p = wavy(20);
        let trap = SymmetricMeasure::trapezoid();
        let lin = SmoothFunction::polynomial(vec![0.3, 2.0]);
        assert_eq!(corrector(&p, &lin, 1, &trap, 1.0).unwrap(), 0.0);
        assert!(ito_residual(&p, &lin, &trap, 1.0).unwrap().abs() < 1e-13);
        let flat = path(vec![0.0; 11], 10);
        let sin = SmoothFunction::sin();
        assert_eq!(corrector(&flat, &sin, 1, &trap, 1.0).unwrap(), 0.0);
        let cube = SmoothFunction::polynomial(vec![0.0, 0.0, 0.0, 1.0 / 6.0]);
        let manual: f64 = -1.0 / 12.0
            * p.values
                .windows(2)
                .map(|w| 0.5 * (w[0] + w[1]) * 0.0 + (w[1] - w[0]).powi(3))
                .sum::<f64>();
        assert!((corrector(&p, &cube, 1, &trap, 1.0).unwrap() - manual).abs() < 1e-13);
        let sq = SmoothFunction::polynomial(vec![0.0, 0.0, 1.0]);
        assert!(ito_residual(&p, &sq, &trap, 1.0).unwrap().abs() < 1e-13);
        assert!(ito_residual(&p, &SmoothFunction::polynomial(vec![4.0]), &trap, 1.0).unwrap() == 0.0);
    }

    #[test]
    fn polynomial_exactness_of_the_expansion() {
        let p = wavy(24);
        for m in [
            SymmetricMeasure::trapezoid(),
            SymmetricMeasure::simpson(),
            SymmetricMeasure::milne(),
        ] {
            let ell = m.ell().unwrap() as usize;
            // Degree 4ℓ+1 polynomials are reproduced exactly by the expansion.
            let coeffs: Vec<f64> = (0..=4 * ell + 1).map(|i| 1.0 / (1.0 + i as f64)).collect();
            let f = SmoothFunction::polynomial(coeffs);
            let r = ito_residual(&p, &f, &m, 1.0).unwrap();
            let c = corrector_sum_values(&p.values, &f, &m).unwrap();
            assert!((r - c).abs() < 1e-9, "{}: {r} vs {c}", m.label());
        }
    }

    #[test]
    fn exact_variance_matches_dense() {
        let m = ProcessModel::bifractional(0.5, 1.0 / 3.0).unwrap();
        let n = 40;
        let cov = build_increment_covariance(&m, GridSpec::new(n, 1.0).unwrap()).unwrap();
        let dense = exact_variance_from_cov(&cov, 1, 30).unwrap();
        let streamed = exact_variance_vn(&m, 1, n, 0.75).unwrap();
        assert!((dense - streamed).abs() < 1e-13 * dense);
        assert_eq!(exact_variance_vn(&m, 1, n, 0.5 / n as f64).unwrap(), 0.0);
        let single = exact_variance_vn(&m, 1, n, 1.0 / n as f64).unwrap();
        assert!((single - 15.0 * cov.get(0, 0).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn cross_moment_symmetric() {
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let a = exact_cross_moment_vn(&m, 1, 64, 0.5, 1.0, 1 << 20).unwrap();
        let b = exact_cross_moment_vn(&m, 1, 64, 1.0, 0.5, 1 << 20).unwrap();
        assert_eq!(a, b);
        let half = exact_variance_vn(&m, 1, 64, 0.5).unwrap();
        assert!(a > 0.5 * half && a < 2.0 * half);
    }

    #[test]
    fn taylor_remainder_basics() {
        let trap = SymmetricMeasure::trapezoid();
        let sin = SmoothFunction::sin();
        assert_eq!(taylor_remainder(&sin, &trap, 0.4, 0.4).unwrap(), 0.0);
        let quad = SmoothFunction::polynomial(vec![1.0, -1.0, 2.0]);
        assert!(taylor_remainder(&quad, &trap, 0.1, 0.9).unwrap().abs() < 1e-15);
    }

    #[test]
    fn limit_variance_closed_forms() {
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let trap = SymmetricMeasure::trapezoid();
        let sigma2 = sigma_ell_series(&m, 1, 1e-12).unwrap().sigma2;
        let cube = SmoothFunction::polynomial(vec![0.0, 0.0, 0.0, 1.0 / 6.0]);
        let v = limit_variance_z(&m, &cube, 1, &trap, 0.7, 64).unwrap();
        let want = sigma2 / 144.0 * 0.7f64.powf(1.0);
        assert!((v - want).abs() < 1e-10 * want, "{v} vs {want}");
        let zero = SmoothFunction::polynomial(vec![1.0, 2.0]);
        assert_eq!(limit_variance_z(&m, &zero, 1, &trap, 1.0, 64).unwrap(), 0.0);
        // f = sin: E[cos²(X_s)] = (1 + exp(-2 s^{1/3}))/2, and d(s^{2β/α}) = ds.
        let sin = SmoothFunction::sin();
        let v = limit_variance_z(&m, &sin, 1, &trap, 1.0, 64).unwrap();
        let gl = GaussLegendre::new(64);
        let inner: f64 = (0..64)
            .map(|i| {
                let (a, b) = (i as f64 / 64.0, (i + 1) as f64 / 64.0);
                gl.integrate(a.powf(1.0 / 3.0), b.powf(1.0 / 3.0), |w| {
                    0.5 * (1.0 + (-2.0 * w).exp()) * 3.0 * w * w
                })
            })
            .sum();
        let want = sigma2 / 144.0 * inner;
        assert!((v - want).abs() < 1e-9 * want, "{v} vs {want}");
        assert!(limit_variance_z(&m, &sin, 2, &trap, 1.0, 64).is_err());
    }
}
