//! Probabilists' Hermite polynomials, the odd-monomial expansion
//! `x^{2r+1} = Σ_j c_{j,r} H_{2(r-j)+1}(x)`, and joint odd moments of a
//! centered Gaussian pair.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_R: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OddPowerCoeffs {
    pub r: u32,
    /// `[c_{0,r}, …, c_{r,r}]`, stored as decimal-exact integers.
    #[serde(serialize_with = "serialize_biguints")]
    pub coeffs: Vec<BigUint>,
}

fn serialize_biguints<S: serde::Serializer>(v: &[BigUint], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for c in v {
        match c.to_u64() {
            Some(x) => seq.serialize_element(&x)?,
            None => seq.serialize_element(&c.to_string())?,
        }
    }
    seq.end()
}

impl OddPowerCoeffs {
    pub fn as_f64(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| c.to_f64().unwrap_or(f64::INFINITY))
            .collect()
    }

    /// Hermite degree paired with `c_{j,r}`.
    pub fn degree(&self, j: usize) -> u32 {
        2 * (self.r - j as u32) + 1
    }
}

/// `H_q(x)` by the three-term recurrence.
pub fn hermite_eval(q: u32, x: f64) -> f64 {
    let mut prev = 1.0;
    if q == 0 {
        return prev;
    }
    let mut cur = x;
    for k in 1..q {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `H_0(x), …, H_q(x)` in one pass.
pub fn hermite_all(q: u32, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(q as usize + 1);
    out.push(1.0);
    if q >= 1 {
        out.push(x);
    }
    for k in 1..q as usize {
        let next = x * out[k] - k as f64 * out[k - 1];
        out.push(next);
    }
    out
}

fn factorial(n: u32) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

fn compute_row(r: u32) -> Vec<BigUint> {
    // c_{j,r} = (2r+1)! / (2^j j! (2(r-j)+1)!): the number of ways to pair 2j
    // of the 2r+1 factors, each pairing contributing one contraction.
    let top = factorial(2 * r + 1);
    (0..=r)
        .map(|j| {
            let den = (BigUint::one() << j as usize) * factorial(j) * factorial(2 * (r - j) + 1);
            &top / den
        })
        .collect()
}

fn cache() -> &'static RwLock<HashMap<u32, Vec<BigUint>>> {
    static CACHE: OnceLock<RwLock<HashMap<u32, Vec<BigUint>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

pub fn odd_power_coeffs(r: u32) -> Result<OddPowerCoeffs> {
    if r > MAX_R {
        return Err(Error::Overflow { r, cap: MAX_R });
    }
    if let Some(row) = cache().read().expect("hermite cache poisoned").get(&r) {
        return Ok(OddPowerCoeffs { r, coeffs: row.clone() });
    }
    let row = compute_row(r);
    cache().write().expect("hermite cache poisoned").insert(r, row.clone());
    Ok(OddPowerCoeffs { r, coeffs: row })
}

/// `Σ_j c_{j,r} H_{2(r-j)+1}(x)`.
pub fn eval_expansion(c: &OddPowerCoeffs, x: f64) -> f64 {
    let h = hermite_all(2 * c.r + 1, x);
    c.as_f64()
        .iter()
        .enumerate()
        .map(|(j, cj)| cj * h[c.degree(j) as usize])
        .sum()
}

/// `E[A^{2ℓ+1} B^{2ℓ+1}]` for a centered Gaussian pair.
pub fn joint_odd_moment(ell: u32, var_a: f64, var_b: f64, cov: f64) -> Result<f64> {
    if !(var_a > 0.0 && var_b > 0.0) {
        return Err(Error::Parameter(format!(
            "variances must be positive (got {var_a}, {var_b})"
        )));
    }
    let bound = (var_a * var_b).sqrt();
    if cov.abs() > bound * (1.0 + 1e-12) || !cov.is_finite() {
        return Err(Error::Correlation { cov: cov.abs(), bound });
    }
    let c = odd_power_coeffs(ell)?.as_f64();
    let vv = var_a * var_b;
    let mut total = 0.0;
    for (r, cr) in c.iter().enumerate() {
        let q = 2 * (ell - r as u32) + 1;
        let q_fact: f64 = (1..=q).map(f64::from).product();
        total += cr * cr * vv.powi(r as i32) * q_fact * cov.powi(q as i32);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::GaussHermite;

    fn row_u64(r: u32) -> Vec<u64> {
        odd_power_coeffs(r)
            .unwrap()
            .coeffs
            .iter()
            .map(|c| c.to_u64().unwrap())
            .collect()
    }

    #[test]
    fn eval_small() {
        assert_eq!(hermite_eval(0, 7.3), 1.0);
        assert_eq!(hermite_eval(2, 2.0), 3.0);
        assert_eq!(hermite_eval(3, 2.0), 2.0);
        assert_eq!(hermite_all(3, 2.0), vec![1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn known_rows() {
        assert_eq!(row_u64(0), vec![1]);
        assert_eq!(row_u64(1), vec![1, 3]);
        assert_eq!(row_u64(2), vec![1, 10, 15]);
        assert_eq!(row_u64(3), vec![1, 21, 105, 105]);
    }

    #[test]
    fn leading_coefficient_is_one_and_cap() {
        for r in 0..=MAX_R {
            let c = odd_power_coeffs(r).unwrap();
            assert_eq!(c.coeffs[0], BigUint::one());
            assert_eq!(c.coeffs.len(), r as usize + 1);
        }
        assert_eq!(odd_power_coeffs(33).unwrap_err(), Error::Overflow { r: 33, cap: 32 });
    }

    #[test]
    fn orthogonality_under_gauss_hermite() {
        let gh = GaussHermite::new(64);
        for p in 0..=9u32 {
            for q in 0..=9u32 {
                let v = gh.expect(|x| hermite_eval(p, x) * hermite_eval(q, x));
                let fp: f64 = (1..=p).map(f64::from).product();
                let fq: f64 = (1..=q).map(f64::from).product();
                let want = if p == q { fq } else { 0.0 };
                // Off-diagonal terms cancel between nodes of size ~ sqrt(p! q!).
                assert!((v - want).abs() < 1e-10 * (fp * fq).sqrt(), "p={p} q={q} got {v}");
            }
        }
    }

    #[test]
    fn joint_moment_basics() {
        assert_eq!(joint_odd_moment(0, 2.0, 3.0, 0.7).unwrap(), 0.7);
        assert_eq!(joint_odd_moment(1, 1.0, 1.0, 0.0).unwrap(), 0.0);
        let rho = 0.4;
        let v = joint_odd_moment(1, 1.0, 1.0, rho).unwrap();
        assert!((v - (6.0 * rho.powi(3) + 9.0 * rho)).abs() < 1e-14);
        assert!(matches!(
            joint_odd_moment(1, 1.0, 1.0, 1.5),
            Err(Error::Correlation { .. })
        ));
        assert!(joint_odd_moment(1, 0.0, 1.0, 0.0).is_err());
    }
}
