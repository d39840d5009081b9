//! Small numerical kernels shared across the crate: order-fixed summation,
//! Gaussian quadrature rules, and thin wrappers over special functions.

use std::f64::consts::PI;

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so the result is independent of how the values were
/// produced or scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BASE: usize = 16;
    if values.len() <= BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Gamma function (Lanczos approximation, ~1e-15 relative on the positive axis).
pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Gauss–Hermite rule for the standard Gaussian measure:
/// `E[g(Z)] ≈ Σ weights[i] g(nodes[i])`, exact for polynomials of degree `< 2n`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite needs at least one node");
        // Newton iteration on orthonormal physicists' Hermite functions,
        // then rescale to the probabilists' weight.
        const PIM4: f64 = 0.751_125_544_464_942_5;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let scale = 1.0 / PI.sqrt();
        let nodes = x.iter().rev().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().rev().map(|v| v * scale).collect();
        GaussHermite { nodes, weights }
    }

    /// `E[g(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        let terms: Vec<f64> = self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).collect();
        pairwise_sum(&terms)
    }

    /// `E[g(A, B)]` for a centered Gaussian pair with the given second moments.
    pub fn expect_bivariate<F: Fn(f64, f64) -> f64>(&self, var_a: f64, var_b: f64, cov: f64, g: F) -> f64 {
        let sa = var_a.sqrt();
        let sb = var_b.sqrt();
        let rho = (cov / (sa * sb)).clamp(-1.0, 1.0);
        let rc = (1.0 - rho * rho).max(0.0).sqrt();
        let mut terms = Vec::with_capacity(self.nodes.len() * self.nodes.len());
        for (&u, &wu) in self.nodes.iter().zip(&self.weights) {
            for (&v, &wv) in self.nodes.iter().zip(&self.weights) {
                let a = sa * u;
                let b = sb * (rho * u + rc * v);
                terms.push(wu * wv * g(a, b));
            }
        }
        pairwise_sum(&terms)
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre needs at least one node");
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            x[i] = -z;
            x[n - 1 - i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            w[n - 1 - i] = w[i];
        }
        GaussLegendre { nodes: x, weights: w }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, g: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(mid + half * x))
            .collect();
        half * pairwise_sum(&terms)
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_moments() {
        let gh = GaussHermite::new(64);
        assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((gh.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
        assert!((gh.expect(|x| x.powi(10)) - 945.0).abs() < 1e-8);
        assert!(gh.expect(|x| x.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_odd_sizes() {
        for n in [1, 5, 17, 128] {
            let gh = GaussHermite::new(n);
            assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-12, "n = {n}");
            if n >= 2 {
                assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-11, "n = {n}");
            }
        }
    }

    #[test]
    fn gauss_legendre_polynomials() {
        let gl = GaussLegendre::new(16);
        assert!((gl.integrate(0.0, 1.0, |x| x.powi(7)) - 0.125).abs() < 1e-14);
        assert!((gl.integrate(-1.0, 2.0, |x| x * x) - 3.0).abs() < 1e-13);
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }

    #[test]
    fn gamma_reference_values() {
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-14);
        assert!((gamma(5.0) - 24.0).abs() < 1e-12);
        // Γ(2/3)
        assert!((gamma(2.0 / 3.0) - 1.354_117_939_426_400_4).abs() < 1e-13);
    }
}
