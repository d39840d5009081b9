//! Sample moments with standard errors; all sums are pairwise so results do not
//! depend on how replications were scheduled.

use serde::Serialize;

use crate::numerics::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub se_mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Delta-method standard error `sqrt((m4 - s⁴)/M)`.
    pub se_variance: f64,
    /// `E[x²]` (uncentred second moment).
    pub second_moment: f64,
    pub se_second_moment: f64,
}

impl Moments {
    pub fn of(x: &[f64]) -> Self {
        let m = x.len();
        let mf = m as f64;
        if m == 0 {
            return Moments {
                count: 0,
                mean: f64::NAN,
                se_mean: f64::NAN,
                variance: f64::NAN,
                se_variance: f64::NAN,
                second_moment: f64::NAN,
                se_second_moment: f64::NAN,
            };
        }
        let mean = pairwise_sum(x) / mf;
        let c2: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
        let m2 = pairwise_sum(&c2) / mf;
        let c4: Vec<f64> = c2.iter().map(|v| v * v).collect();
        let m4 = pairwise_sum(&c4) / mf;
        let variance = if m > 1 { m2 * mf / (mf - 1.0) } else { f64::NAN };
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let second_moment = pairwise_sum(&sq) / mf;
        let sq_dev: Vec<f64> = sq.iter().map(|v| (v - second_moment).powi(2)).collect();
        let var_sq = pairwise_sum(&sq_dev) / mf;
        Moments {
            count: m,
            mean,
            se_mean: (variance / mf).sqrt(),
            variance,
            se_variance: ((m4 - m2 * m2).max(0.0) / mf).sqrt(),
            second_moment,
            se_second_moment: (var_sq / mf).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossMoments {
    pub covariance: f64,
    pub se_covariance: f64,
    pub correlation: f64,
    /// Standard error of the correlation from the product variance, without
    /// assuming independence.
    pub se_correlation: f64,
}

impl CrossMoments {
    pub fn of(x: &[f64], y: &[f64]) -> Self {
        assert_eq!(x.len(), y.len());
        let mf = x.len() as f64;
        let mx = pairwise_sum(x) / mf;
        let my = pairwise_sum(y) / mf;
        let prod: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
        let cov = pairwise_sum(&prod) / mf;
        let dev: Vec<f64> = prod.iter().map(|p| (p - cov).powi(2)).collect();
        let var_prod = pairwise_sum(&dev) / mf;
        let sx = (pairwise_sum(&x.iter().map(|a| (a - mx).powi(2)).collect::<Vec<_>>()) / mf).sqrt();
        let sy = (pairwise_sum(&y.iter().map(|b| (b - my).powi(2)).collect::<Vec<_>>()) / mf).sqrt();
        let se_cov = (var_prod / mf).sqrt();
        CrossMoments {
            covariance: cov * mf / (mf - 1.0),
            se_covariance: se_cov,
            correlation: cov / (sx * sy),
            se_correlation: se_cov / (sx * sy),
        }
    }
}
