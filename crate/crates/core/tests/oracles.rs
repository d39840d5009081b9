//! Independent oracles for the closed forms: Wick enumeration, triangular
//! solves, tensor Gauss–Hermite and Monte Carlo.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;

use ssglab::covariance::{build_increment_covariance, cholesky_factor, GridSpec};
use ssglab::functions::SmoothFunction;
use ssglab::hermite::{joint_odd_moment, odd_power_coeffs};
use ssglab::numerics::{GaussHermite, GaussLegendre};
use ssglab::rng::replication_stream;
use ssglab::statistics::{
    exact_variance_from_cov, exact_variance_vn, limit_variance_z, sigma_ell_series, taylor_remainder,
    taylor_remainder_composite, taylor_remainder_precise,
};
use ssglab::{ProcessModel, SymmetricMeasure};

/// `E[Π_i G_{idx_i}]` by summing over all perfect matchings.
fn wick(idx: &mut Vec<usize>, cov: &dyn Fn(usize, usize) -> f64) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx.remove(0);
    let mut total = 0.0;
    for p in 0..idx.len() {
        let partner = idx.remove(p);
        total += cov(first, partner) * wick(idx, cov);
        idx.insert(p, partner);
    }
    idx.insert(0, first);
    total
}

#[test]
fn exact_variance_matches_wick_enumeration() {
    for model in [
        ProcessModel::fbm(1.0 / 6.0).unwrap(),
        ProcessModel::bifractional(0.4, 0.5).unwrap(),
        ProcessModel::dw_z2(0.3).unwrap(),
        ProcessModel::swanson(),
    ] {
        for ell in 1..=2u32 {
            let q = 2 * ell as usize + 1;
            for n_incr in [1usize, 3, 8] {
                let n = 8;
                let cov =
                    build_increment_covariance(&model, GridSpec::new(n, n_incr as f64 / n as f64).unwrap()).unwrap();
                let mut total = 0.0;
                for j in 0..n_incr {
                    for k in 0..n_incr {
                        let which = |i: usize| if i < q { j } else { k };
                        let c = |a: usize, b: usize| cov.get(which(a), which(b));
                        total += wick(&mut (0..2 * q).collect(), &c);
                    }
                }
                let t = n_incr as f64 / n as f64;
                let got = exact_variance_vn(&model, ell, n, t).unwrap();
                assert!(
                    (got - total).abs() <= 1e-8 * total.abs(),
                    "{} ell={ell} N={n_incr}: {got} vs {total}",
                    model.spec()
                );
                let dense = exact_variance_from_cov(&cov, ell, n_incr).unwrap();
                assert!((dense - total).abs() <= 1e-8 * total.abs());
            }
        }
    }
}

/// Monomial coefficients of the probabilists' Hermite polynomials.
fn hermite_monomials(max: usize) -> Vec<Vec<BigInt>> {
    let mut h = vec![vec![BigInt::from(1)], vec![BigInt::from(0), BigInt::from(1)]];
    for k in 1..max {
        let mut next = vec![BigInt::zero(); k + 2];
        for (i, c) in h[k].iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in h[k - 1].iter().enumerate() {
            next[i] -= c * BigInt::from(k);
        }
        h.push(next);
    }
    h
}

#[test]
fn odd_power_coeffs_match_triangular_solve() {
    let h = hermite_monomials(12);
    for r in 0..=5u32 {
        let deg = 2 * r as usize + 1;
        // Solve x^deg = Σ_j c_j H_{deg-2j}, peeling off the leading term each time.
        let mut rest: Vec<BigRational> = (0..=deg)
            .map(|i| BigRational::from_integer(BigInt::from((i == deg) as i32)))
            .collect();
        let mut solved = Vec::new();
        for j in 0..=r as usize {
            let d = deg - 2 * j;
            let c = rest[d].clone() / BigRational::from_integer(h[d][d].clone());
            for (i, hc) in h[d].iter().enumerate() {
                rest[i] -= c.clone() * BigRational::from_integer(hc.clone());
            }
            solved.push(c);
        }
        assert!(rest.iter().all(Zero::is_zero));
        let coeffs = odd_power_coeffs(r).unwrap();
        for (j, c) in solved.iter().enumerate() {
            assert!(c.is_integer());
            assert_eq!(c.to_integer().to_string(), coeffs.coeffs[j].to_string(), "r={r} j={j}");
        }
    }
}

#[test]
fn joint_odd_moment_matches_tensor_gauss_hermite() {
    let gh = GaussHermite::new(40);
    for ell in 0..=3u32 {
        let q = 2 * ell as i32 + 1;
        for &(va, vb) in &[(1.0, 1.0), (0.3, 2.0), (1.7, 0.6)] {
            for &rho in &[-0.9, -0.5, 0.0, 0.2, 0.9] {
                let cov = rho * f64::sqrt(va * vb);
                let want = gh.expect_bivariate(va, vb, cov, |a, b| a.powi(q) * b.powi(q));
                let got = joint_odd_moment(ell, va, vb, cov).unwrap();
                let scale = (va * vb).powf(q as f64 / 2.0);
                assert!(
                    (got - want).abs() <= 1e-8 * want.abs() || (got - want).abs() <= 1e-12 * scale,
                    "ell={ell} rho={rho}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn sigma_series_is_stable_under_doubling() {
    for (model, ell) in [
        (ProcessModel::fbm(1.0 / 6.0).unwrap(), 1),
        (ProcessModel::fbm(0.1).unwrap(), 2),
        (ProcessModel::bifractional(0.5, 1.0 / 3.0).unwrap(), 1),
    ] {
        let c = sigma_ell_series(&model, ell, 1e-12).unwrap();
        assert!(c.sigma2 > 0.0 && c.tail_bound < 1e-10 * c.sigma2);
        let tighter = sigma_ell_series(&model, ell, 1e-14).unwrap();
        assert!(tighter.truncation_p > c.truncation_p);
        assert!((tighter.sigma2 - c.sigma2).abs() < 1e-12 * c.sigma2);
    }
}

#[test]
fn limit_variance_against_nested_monte_carlo() {
    let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
    let trap = SymmetricMeasure::trapezoid();
    let sin = SmoothFunction::sin();
    let got = limit_variance_z(&m, &sin, 1, &trap, 1.0, 64).unwrap();
    let sigma2 = sigma_ell_series(&m, 1, 1e-12).unwrap().sigma2;
    // Here 2β/α = 1, so the outer measure is ds; average cos²(X_s) over draws.
    let gl = GaussLegendre::new(12);
    let mut mc = 0.0;
    for panel in 0..8 {
        let (a, b) = (panel as f64 / 8.0, (panel + 1) as f64 / 8.0);
        let (a3, b3) = (a.powf(1.0 / 3.0), b.powf(1.0 / 3.0));
        // Substitute s = w³ to remove the endpoint singularity.
        mc += gl.integrate(a3, b3, |w| {
            let s = w * w * w;
            let sd = s.powf(1.0 / 6.0);
            let mut rng = replication_stream(77, (w * 1e12) as u64);
            let k = 200_000;
            let acc: f64 = (0..k)
                .map(|_| (sd * rng.sample::<f64, _>(StandardNormal)).cos().powi(2))
                .sum();
            acc / k as f64 * 3.0 * w * w
        });
    }
    let want = sigma2 / 144.0 * mc;
    assert!((got - want).abs() < 0.005 * want, "{got} vs {want}");
}

#[test]
fn sampled_variance_of_x1_and_first_increment_covariance() {
    let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
    let grid = GridSpec::new(256, 1.0).unwrap();
    let cov = build_increment_covariance(&m, grid).unwrap();
    let l = cholesky_factor(&cov).unwrap();
    let reps = 20_000;
    let rows = l.map_replications(3, reps, |_, incr| (incr.iter().sum::<f64>(), incr[0], incr[1]));
    let x1: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let v = x1.iter().map(|x| x * x).sum::<f64>() / reps as f64;
    assert!((v - 1.0).abs() < 0.03, "{v}");
    let prods: Vec<f64> = rows.iter().map(|r| r.1 * r.2).collect();
    let mean = prods.iter().sum::<f64>() / reps as f64;
    let sd = (prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / reps as f64).sqrt();
    assert!((mean - cov.get(0, 1)).abs() < 5.0 * sd / (reps as f64).sqrt());
}

#[test]
fn taylor_remainder_orders() {
    let sin = SmoothFunction::sin();
    let trap = SymmetricMeasure::trapezoid();
    let ms: Vec<f64> = (4..=10).map(f64::from).collect();
    // Local remainder at a generic point: next odd term, order 4ℓ+3.
    let local: Vec<f64> = ms
        .iter()
        .map(|&m| {
            taylor_remainder_precise(&sin, &trap, 0.3, 0.3 + 2f64.powf(-m))
                .unwrap()
                .abs()
                .log2()
        })
        .collect();
    let (slope, _) = ssglab::numerics::linear_fit(&ms, &local);
    assert!((slope + 7.0).abs() < 0.3, "local {slope}");
    // Summed over 2^m pieces of [0, 1] one power is lost.
    let comp: Vec<f64> = ms
        .iter()
        .map(|&m| {
            taylor_remainder_composite(&sin, &trap, 0.0, 1.0, 1 << m as u32)
                .unwrap()
                .abs()
                .log2()
        })
        .collect();
    let (slope, _) = ssglab::numerics::linear_fit(&ms, &comp);
    assert!((slope + 6.0).abs() < 0.3, "composite {slope}");
    // The f64 path agrees where the remainder is above roundoff.
    let big = taylor_remainder_precise(&sin, &trap, 0.3, 0.8).unwrap();
    assert!((taylor_remainder(&sin, &trap, 0.3, 0.8).unwrap() - big).abs() < 1e-14);
    for deg in 0..=2 {
        let p = SmoothFunction::polynomial((0..=deg).map(|i| 0.5 + i as f64).collect());
        assert!(taylor_remainder(&p, &trap, -0.4, 0.7).unwrap().abs() < 1e-14);
    }
    let simpson = SymmetricMeasure::simpson();
    let p = SmoothFunction::polynomial((0..=9).map(|i| 1.0 / (1.0 + i as f64)).collect());
    assert!(taylor_remainder(&p, &simpson, 0.1, 0.6).unwrap().abs() < 1e-14);
}
