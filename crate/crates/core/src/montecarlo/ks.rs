//! Kolmogorov–Smirnov tests with asymptotic p-values.

use crate::error::{Error, Result};

pub const MIN_KS_SAMPLE: usize = 8;

/// Reference distribution for [`ks_statistic`].
pub enum Reference<'a> {
    Cdf(&'a dyn Fn(f64) -> f64),
    Sample(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_statistic(sample: &[f64], reference: Reference<'_>) -> Result<KsResult> {
    match reference {
        Reference::Cdf(f) => ks_one_sample(sample, f),
        Reference::Sample(other) => ks_two_sample(sample, other),
    }
}

fn sorted(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.len() < MIN_KS_SAMPLE {
        return Err(Error::SampleSize {
            size: sample.len(),
            min: MIN_KS_SAMPLE,
        });
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::Parameter("sample contains NaN".into()));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

pub fn ks_one_sample(sample: &[f64], cdf: &dyn Fn(f64) -> f64) -> Result<KsResult> {
    let s = sorted(sample)?;
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_p(d, n),
    })
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_p(d, ne),
    })
}

/// `P(D > d)` from the Kolmogorov distribution with Stephens' small-sample
/// correction `λ = (√n + 0.12 + 0.11/√n) d`.
pub fn kolmogorov_p(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    kolmogorov_survival(lambda)
}

/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form, rapidly convergent for small λ.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=8).map(|k| ((2 * k - 1) as f64).powi(2) * c).map(f64::exp).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::standard_normal_cdf;
    use crate::rng::replication_stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, rep: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = replication_stream(seed, rep);
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect()
    }

    #[test]
    fn survival_branches_agree() {
        for l in [1.1, 1.15, 1.18, 1.2] {
            let c = -std::f64::consts::PI.powi(2) / (8.0 * l * l);
            let theta: f64 = 1.0
                - (2.0 * std::f64::consts::PI).sqrt() / l
                    * (1..=8).map(|k| (((2 * k - 1) as f64).powi(2) * c).exp()).sum::<f64>();
            let alt: f64 = 2.0
                * (1..=100)
                    .map(|k| if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * (k * k) as f64 * l * l).exp())
                    .sum::<f64>();
            assert!((theta - alt).abs() < 1e-12);
        }
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn identical_samples() {
        let a = normals(1, 0, 100, 0.0);
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn small_samples_rejected() {
        let a = [0.0; 7];
        assert!(matches!(
            ks_one_sample(&a, &standard_normal_cdf),
            Err(Error::SampleSize { size: 7, min: 8 })
        ));
    }

    #[test]
    fn calibration_and_power() {
        let cdf = |x: f64| standard_normal_cdf(x);
        let passes = (0..100)
            .filter(|&r| ks_one_sample(&normals(11, r, 100_000, 0.0), &cdf).unwrap().p_value > 0.001)
            .count();
        assert!(passes >= 99, "{passes}");
        let shifted = normals(12, 0, 10_000, 0.5);
        assert!(ks_one_sample(&shifted, &cdf).unwrap().p_value < 1e-6);
        let other = normals(13, 0, 10_000, 0.0);
        assert!(ks_two_sample(&shifted, &other).unwrap().p_value < 1e-6);
        let same = normals(14, 0, 10_000, 0.0);
        assert!(ks_two_sample(&same, &other).unwrap().p_value > 1e-4);
    }
}
