//! Test functions `f` with closed-form derivatives.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hermite::hermite_eval;
use crate::quadrature::parse_rational;
use astro_float::{BigFloat, Consts, RoundingMode};
use num_traits::ToPrimitive;

pub type DerivativeFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Sin,
    Cos,
    /// `x e^{-x²/2}`
    GaussWave,
    /// Ascending coefficients.
    Polynomial(Vec<f64>),
    Custom(DerivativeFn),
}

/// A function together with its derivatives `f^{(k)}` for `k <= max_order`
/// (`None` means every order is available).
#[derive(Clone)]
pub struct SmoothFunction {
    name: String,
    kind: Kind,
    max_order: Option<usize>,
}

impl fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFunction")
            .field("name", &self.name)
            .field("max_order", &self.max_order)
            .finish()
    }
}

impl SmoothFunction {
    pub fn sin() -> Self {
        Self::builtin("sin", Kind::Sin)
    }

    pub fn cos() -> Self {
        Self::builtin("cos", Kind::Cos)
    }

    pub fn gauss_wave() -> Self {
        Self::builtin("xexp", Kind::GaussWave)
    }

    /// `Σ c_i x^i`.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        let mut c = coeffs;
        while c.len() > 1 && c.last() == Some(&0.0) {
            c.pop();
        }
        if c.is_empty() {
            c.push(0.0);
        }
        let name = format!("poly:{}", c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        SmoothFunction {
            name,
            kind: Kind::Polynomial(c),
            max_order: None,
        }
    }

    /// User-supplied derivatives, checked against finite differences on
    /// `[-3, 3]` before use.
    pub fn custom(name: impl Into<String>, max_order: usize, d: DerivativeFn) -> Result<Self> {
        let f = SmoothFunction {
            name: name.into(),
            kind: Kind::Custom(d),
            max_order: Some(max_order),
        };
        f.validate()?;
        Ok(f)
    }

    fn builtin(name: &str, kind: Kind) -> Self {
        SmoothFunction {
            name: name.to_string(),
            kind,
            max_order: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn max_order(&self) -> Option<usize> {
        self.max_order
    }

    /// Polynomial degree, if `f` is a polynomial.
    pub fn degree(&self) -> Option<usize> {
        match &self.kind {
            Kind::Polynomial(c) => Some(c.len() - 1),
            _ => None,
        }
    }

    pub fn require_order(&self, k: usize) -> Result<()> {
        match self.max_order {
            Some(m) if k > m => Err(Error::DerivativeOrder {
                required: k,
                available: m,
            }),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.eval(0, x)
    }

    /// `f^{(k)}(x)`; the caller checks the order with [`Self::require_order`].
    #[inline]
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        match &self.kind {
            Kind::Sin => match k % 4 {
                0 => x.sin(),
                1 => x.cos(),
                2 => -x.sin(),
                _ => -x.cos(),
            },
            Kind::Cos => match k % 4 {
                0 => x.cos(),
                1 => -x.sin(),
                2 => -x.cos(),
                _ => x.sin(),
            },
            Kind::GaussWave => {
                // x e^{-x²/2} = -(e^{-x²/2})', and (e^{-x²/2})^{(m)} = (-1)^m H_m e^{-x²/2}.
                let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * hermite_eval(k as u32 + 1, x) * (-0.5 * x * x).exp()
            }
            Kind::Polynomial(c) => {
                if k >= c.len() {
                    return 0.0;
                }
                let mut acc = 0.0;
                for i in (k..c.len()).rev() {
                    let falling: f64 = ((i - k + 1)..=i).map(|v| v as f64).product();
                    acc = acc * x + c[i] * falling;
                }
                acc
            }
            Kind::Custom(d) => d(k, x),
        }
    }

    /// `f^{(k)}(x)` in `prec`-bit arithmetic. `None` for custom functions,
    /// which only have an `f64` evaluator.
    pub fn eval_big(&self, k: usize, x: &BigFloat, prec: usize, cc: &mut Consts) -> Option<BigFloat> {
        let rm = RoundingMode::ToEven;
        let v = match &self.kind {
            Kind::Sin | Kind::Cos => {
                let shift = k + if matches!(self.kind, Kind::Cos) { 1 } else { 0 };
                match shift % 4 {
                    0 => x.sin(prec, rm, cc),
                    1 => x.cos(prec, rm, cc),
                    2 => x.sin(prec, rm, cc).neg(),
                    _ => x.cos(prec, rm, cc).neg(),
                }
            }
            Kind::GaussWave => {
                let mut prev = BigFloat::from_i32(1, prec);
                let mut cur = x.clone();
                for j in 1..=k {
                    let next =
                        x.mul(&cur, prec, rm)
                            .sub(&prev.mul(&BigFloat::from_u64(j as u64, prec), prec, rm), prec, rm);
                    prev = cur;
                    cur = next;
                }
                let half = BigFloat::from_f64(-0.5, prec);
                let g = x.mul(x, prec, rm).mul(&half, prec, rm).exp(prec, rm, cc);
                let h = cur.mul(&g, prec, rm);
                if k.is_multiple_of(2) {
                    h
                } else {
                    h.neg()
                }
            }
            Kind::Polynomial(c) => {
                let mut acc = BigFloat::from_i32(0, prec);
                for i in (k..c.len()).rev() {
                    let falling: u128 = ((i - k + 1)..=i).map(|v| v as u128).product();
                    let coef = BigFloat::from_f64(c[i], prec).mul(&BigFloat::from_u128(falling, prec), prec, rm);
                    acc = acc.mul(x, prec, rm).add(&coef, prec, rm);
                }
                acc
            }
            Kind::Custom(_) => return None,
        };
        Some(v)
    }

    /// Checks `f^{(k)}` against a Richardson central difference of
    /// `f^{(k-1)}` on a grid of `[-3, 3]`, to `1e-6` relative.
    pub fn validate(&self) -> Result<()> {
        let top = self.max_order.unwrap_or(8).min(8);
        for k in 1..=top {
            for i in 0..=24 {
                let x = -3.0 + 0.25 * i as f64;
                let g = |y: f64| self.eval(k - 1, y);
                let c = |h: f64| (g(x + h) - g(x - h)) / (2.0 * h);
                let h = 1e-3;
                let fd = (4.0 * c(h / 2.0) - c(h)) / 3.0;
                let exact = self.eval(k, x);
                let scale = exact.abs().max(g(x).abs()).max(1.0);
                if !((fd - exact).abs() <= 1e-6 * scale) {
                    return Err(Error::Parameter(format!(
                        "derivative {k} of {} disagrees with finite differences at x = {x}: {exact} vs {fd}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

impl FromStr for SmoothFunction {
    type Err = Error;

    /// `"sin"`, `"cos"`, `"xexp"`, `"poly:c0,c1,..."` (ascending, decimals or
    /// fractions). `"linear"` is `poly:0,1` and `"cube"` is `x³/6`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sin" => Ok(Self::sin()),
            "cos" => Ok(Self::cos()),
            "xexp" => Ok(Self::gauss_wave()),
            "linear" => Ok(Self::polynomial(vec![0.0, 1.0])),
            "cube" => Ok(Self::polynomial(vec![0.0, 0.0, 0.0, 1.0 / 6.0])),
            _ => {
                let body = s
                    .strip_prefix("poly:")
                    .ok_or_else(|| Error::Config(format!("unknown function '{s}'")))?;
                let coeffs = body
                    .split(',')
                    .map(|c| parse_rational(c).map(|r| r.to_f64().unwrap_or(f64::NAN)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::polynomial(coeffs))
            }
        }
    }
}
