//! Finitely atomic symmetric probability measures on `[0, 1]`, their order
//! `ℓ(ν)` and the corrector constants `κ_{ν,h}`.
//!
//! Measures built from rational atoms (the built-in rules and any spec
//! string) keep an exact copy of their atoms, so moments, `ℓ` and `κ` are
//! computed in rational arithmetic.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_ELL_CAP: u32 = 16;
const FLOAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

#[derive(Clone, PartialEq)]
pub struct SymmetricMeasure {
    atoms: Vec<Atom>,
    exact: Option<Vec<(BigRational, BigRational)>>,
    label: String,
}

impl fmt::Debug for SymmetricMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricMeasure")
            .field("label", &self.label)
            .field("atoms", &self.atoms)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureConstants {
    pub ell: u32,
    pub kappa: f64,
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub(crate) fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Parses a decimal or fraction literal exactly (`"0.25"`, `"1/6"`, `"7"`).
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse rational '{s}'"));
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rational(n)?;
        let d = parse_rational(d)?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(n / d);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let num: BigInt = digits.parse().map_err(|_| bad())?;
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(num, den);
    Ok(if neg { -r } else { r })
}

impl SymmetricMeasure {
    /// Validates floating-point atoms (tolerance `1e-12` for matching).
    pub fn new(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Measure("empty atom list".into()));
        }
        for &(y, w) in atoms {
            if !(0.0..=1.0).contains(&y) {
                return Err(Error::Measure(format!("location {y} outside [0, 1]")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Measure(format!("weight {w} at {y} is not positive")));
            }
        }
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<Atom> = Vec::new();
        for (y, w) in sorted {
            match merged.last_mut() {
                Some(last) if (last.location - y).abs() <= 1e-14 => last.weight += w,
                _ => merged.push(Atom { location: y, weight: w }),
            }
        }
        let total: f64 = merged.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-14 {
            return Err(Error::Normalization { total });
        }
        for a in &merged {
            let mirror = 1.0 - a.location;
            let matched = merged
                .iter()
                .any(|b| (b.location - mirror).abs() <= FLOAT_TOL && (b.weight - a.weight).abs() <= FLOAT_TOL);
            if !matched {
                return Err(Error::Asymmetric {
                    location: a.location,
                    mirror,
                });
            }
        }
        Ok(SymmetricMeasure {
            label: describe(&merged),
            atoms: merged,
            exact: None,
        })
    }

    /// Validates rational atoms exactly.
    pub fn from_rational(atoms: Vec<(BigRational, BigRational)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Measure("empty atom list".into()));
        }
        let zero = BigRational::zero();
        let one = BigRational::one();
        for (y, w) in &atoms {
            if *y < zero || *y > one {
                return Err(Error::Measure(format!("location {y} outside [0, 1]")));
            }
            if *w <= zero {
                return Err(Error::Measure(format!("weight {w} at {y} is not positive")));
            }
        }
        let mut sorted = atoms;
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(BigRational, BigRational)> = Vec::new();
        for (y, w) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == y => last.1 += w,
                _ => merged.push((y, w)),
            }
        }
        let total: BigRational = merged.iter().map(|a| a.1.clone()).sum();
        if total != one {
            return Err(Error::Normalization { total: to_f64(&total) });
        }
        for (y, w) in &merged {
            let mirror = &one - y;
            if !merged.iter().any(|(z, v)| *z == mirror && v == w) {
                return Err(Error::Asymmetric {
                    location: to_f64(y),
                    mirror: to_f64(&mirror),
                });
            }
        }
        let atoms: Vec<Atom> = merged
            .iter()
            .map(|(y, w)| Atom {
                location: to_f64(y),
                weight: to_f64(w),
            })
            .collect();
        Ok(SymmetricMeasure {
            label: describe(&atoms),
            atoms,
            exact: Some(merged),
        })
    }

    fn named(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    /// `½(δ₀ + δ₁)`.
    pub fn trapezoid() -> Self {
        Self::from_rational(vec![(ratio(0, 1), ratio(1, 2)), (ratio(1, 1), ratio(1, 2))])
            .expect("trapezoid is valid")
            .named("trapezoid")
    }

    /// `(δ₀ + 4δ_{1/2} + δ₁)/6`.
    pub fn simpson() -> Self {
        Self::from_rational(vec![
            (ratio(0, 1), ratio(1, 6)),
            (ratio(1, 2), ratio(4, 6)),
            (ratio(1, 1), ratio(1, 6)),
        ])
        .expect("simpson is valid")
        .named("simpson")
    }

    /// `(7δ₀ + 32δ_{1/4} + 12δ_{1/2} + 32δ_{3/4} + 7δ₁)/90`.
    pub fn milne() -> Self {
        Self::from_rational(vec![
            (ratio(0, 1), ratio(7, 90)),
            (ratio(1, 4), ratio(32, 90)),
            (ratio(1, 2), ratio(12, 90)),
            (ratio(3, 4), ratio(32, 90)),
            (ratio(1, 1), ratio(7, 90)),
        ])
        .expect("milne is valid")
        .named("milne")
    }

    /// `δ_{1/2}`.
    pub fn midpoint() -> Self {
        Self::from_rational(vec![(ratio(1, 2), ratio(1, 1))])
            .expect("midpoint is valid")
            .named("midpoint")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// The `(location, weight)` pairs in rationals, when the measure was
    /// built from exact input.
    pub fn exact_atoms(&self) -> Option<&[(BigRational, BigRational)]> {
        self.exact.as_deref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// Measures without mass at the endpoints (the midpoint rule) fall outside
    /// the class the limit theorems cover.
    pub fn scope_warning(&self) -> Option<String> {
        let has_endpoints = self.atoms.iter().any(|a| a.location == 0.0);
        if has_endpoints {
            None
        } else {
            Some(format!(
                "measure '{}' has no mass at the endpoints; the midpoint-type rules are outside the covered class",
                self.label
            ))
        }
    }

    pub fn moment_exact(&self, k: u32) -> Option<BigRational> {
        self.exact.as_ref().map(|atoms| {
            atoms
                .iter()
                .map(|(y, w)| w * num_traits::pow(y.clone(), k as usize))
                .sum()
        })
    }

    /// `Σ w_i y_i^k`.
    pub fn moment(&self, k: u32) -> f64 {
        match self.moment_exact(k) {
            Some(r) => to_f64(&r),
            None => self.atoms.iter().map(|a| a.weight * a.location.powi(k as i32)).sum(),
        }
    }

    pub fn ell(&self) -> Result<u32> {
        self.ell_with_cap(DEFAULT_ELL_CAP)
    }

    /// Smallest `j >= 1` whose even moment `∫ y^{2j} ν(dy)` differs from `1/(2j+1)`.
    pub fn ell_with_cap(&self, cap: u32) -> Result<u32> {
        for j in 1..=cap {
            let mismatch = match self.moment_exact(2 * j) {
                Some(m) => m != ratio(1, 2 * j as i64 + 1),
                None => (self.moment(2 * j) - 1.0 / (2 * j + 1) as f64).abs() > FLOAT_TOL,
            };
            if mismatch {
                return Ok(j);
            }
        }
        Err(Error::EllExceedsCap { cap })
    }

    /// `κ_{ν,h} = (1/(2h)!) (1/((2h+1) 2^{2h}) - ∫ (y-½)^{2h} ν(dy))` in rationals.
    pub fn kappa_exact(&self, h: u32) -> Option<BigRational> {
        let atoms = self.exact.as_ref()?;
        let half = ratio(1, 2);
        let central: BigRational = atoms
            .iter()
            .map(|(y, w)| w * num_traits::pow(y - &half, 2 * h as usize))
            .sum();
        let lead = BigRational::new(
            BigInt::one(),
            BigInt::from(2 * h + 1) * num_traits::pow(BigInt::from(2), 2 * h as usize),
        );
        Some((lead - central) / BigRational::from_integer(factorial(2 * h)))
    }

    pub fn kappa(&self, h: u32) -> f64 {
        match self.kappa_exact(h) {
            Some(r) => to_f64(&r),
            None => {
                let central: f64 = self
                    .atoms
                    .iter()
                    .map(|a| a.weight * (a.location - 0.5).powi(2 * h as i32))
                    .sum();
                let lead = 1.0 / ((2 * h + 1) as f64 * 4f64.powi(h as i32));
                let fact: f64 = (1..=2 * h).map(f64::from).product();
                (lead - central) / fact
            }
        }
    }

    pub fn constants(&self) -> Result<QuadratureConstants> {
        let ell = self.ell()?;
        Ok(QuadratureConstants {
            ell,
            kappa: self.kappa(ell),
        })
    }

    /// Canonical spec string.
    pub fn spec(&self) -> String {
        match self.label.as_str() {
            "trapezoid" | "simpson" | "milne" | "midpoint" => self.label.clone(),
            _ => match &self.exact {
                Some(atoms) => format!(
                    "atoms:{}",
                    atoms
                        .iter()
                        .map(|(y, w)| format!("{y}={w}"))
                        .collect::<Vec<_>>()
                        .join(",")
                ),
                None => format!(
                    "atoms:{}",
                    self.atoms
                        .iter()
                        .map(|a| format!("{}={}", a.location, a.weight))
                        .collect::<Vec<_>>()
                        .join(",")
                ),
            },
        }
    }
}

fn describe(atoms: &[Atom]) -> String {
    atoms
        .iter()
        .map(|a| format!("{}@{}", a.weight, a.location))
        .collect::<Vec<_>>()
        .join("+")
}

/// Renders a rational as `p/q` (or `p` when integral).
pub fn format_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl FromStr for SymmetricMeasure {
    type Err = Error;

    /// `"trapezoid"`, `"simpson"`, `"milne"`, `"midpoint"`, or
    /// `"atoms:0=0.5,1=0.5"` (location=weight pairs, decimals or fractions).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "trapezoid" => return Ok(Self::trapezoid()),
            "simpson" => return Ok(Self::simpson()),
            "milne" => return Ok(Self::milne()),
            "midpoint" => return Ok(Self::midpoint()),
            _ => {}
        }
        let body = s
            .strip_prefix("atoms:")
            .ok_or_else(|| Error::Config(format!("unknown measure '{s}'")))?;
        let mut atoms = Vec::new();
        for item in body.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (y, w) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed atom '{item}'")))?;
            atoms.push((parse_rational(y)?, parse_rational(w)?));
        }
        Self::from_rational(atoms)
    }
}
