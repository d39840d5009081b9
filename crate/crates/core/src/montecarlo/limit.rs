//! Direct simulation of the limit `Z_t = κσ_ℓ ∫_0^t f^{(2ℓ+1)}(X_s) dY_s` by
//! its big-block discretization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{GridSpec, LowerFactor};
use crate::error::{Error, Result};
use crate::functions::SmoothFunction;
use crate::numerics::{pairwise_sum, GaussHermite};
use crate::process::ProcessModel;
use crate::quadrature::SymmetricMeasure;
use crate::rng::auxiliary_stream;
use crate::statistics::{sigma_ell_series, DEFAULT_SIGMA_REL_TOL};

pub const DEFAULT_P_BLOCKS: usize = 256;

/// One Y-increment interval `[left, right]` inside the block starting at grid
/// index `block`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    block: usize,
    var: f64,
}

/// Sampler of `Ξ_p(t) = κσ Σ_k f^{(2ℓ+1)}(X_{k/p}) (Y_{(k+1)/p ∧ t} - Y_{k/p})`
/// jointly for several `t`. `X` is exact on the `p`-grid; `Y` has independent
/// centred increments with `Var Y_s = s^{2β/α}`, independent of `X`.
pub struct LimitZSampler {
    f: SmoothFunction,
    order: usize,
    scale: f64,
    factor: LowerFactor,
    p: usize,
    /// Pieces in time order, and for each `t` the number of pieces up to `t`.
    pieces: Vec<Piece>,
    cut: Vec<usize>,
    t_list: Vec<f64>,
    sd_unit: f64,
    two_beta: f64,
    gamma: f64,
}

fn pieces_for(p: usize, gamma: f64, t_list: &[f64]) -> (Vec<Piece>, Vec<usize>) {
    let t_max = t_list.iter().copied().fold(0.0, f64::max);
    let mut points: Vec<f64> = (0..).map(|k| k as f64 / p as f64).take_while(|&s| s < t_max).collect();
    points.extend_from_slice(t_list);
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let pieces: Vec<Piece> = points
        .windows(2)
        .map(|w| Piece {
            block: ((w[0] * p as f64) + 1e-9).floor() as usize,
            var: w[1].powf(gamma) - w[0].powf(gamma),
        })
        .collect();
    let cut = t_list
        .iter()
        .map(|&t| {
            points
                .iter()
                .position(|&s| (s - t).abs() <= 1e-12 * t.max(1.0))
                .expect("t is a breakpoint")
        })
        .collect();
    (pieces, cut)
}

impl LimitZSampler {
    /// `factor` must be the increment factor of `model` on the grid `(p, T)`
    /// with `T >= max t_list`.
    pub fn new(
        model: &ProcessModel,
        f: &SmoothFunction,
        ell: u32,
        measure: &SymmetricMeasure,
        t_list: &[f64],
        factor: LowerFactor,
        grid: GridSpec,
    ) -> Result<Self> {
        let p = grid.n;
        if p < 8 {
            return Err(Error::Parameter(format!("p_blocks = {p} must be >= 8")));
        }
        let order = 2 * ell as usize + 1;
        f.require_order(order)?;
        let t_max = t_list.iter().copied().fold(0.0, f64::max);
        if t_list.iter().any(|&t| t <= 0.0) || t_max > grid.horizon + 1e-12 {
            return Err(Error::Parameter("t values must lie in (0, horizon]".into()));
        }
        if factor.dim() != grid.n_incr {
            return Err(Error::Parameter("factor does not match the block grid".into()));
        }
        let sigma2 = sigma_ell_series(model, ell, DEFAULT_SIGMA_REL_TOL)?.sigma2;
        let kappa = measure.kappa(ell);
        let gamma = 2.0 * model.beta() / model.alpha();
        let (pieces, cut) = pieces_for(p, gamma, t_list);
        Ok(LimitZSampler {
            f: f.clone(),
            order,
            scale: kappa * sigma2.sqrt(),
            factor,
            p,
            pieces,
            cut,
            t_list: t_list.to_vec(),
            sd_unit: model.phi(1.0)?.sqrt(),
            two_beta: 2.0 * model.beta(),
            gamma,
        })
    }

    pub fn blocks(&self) -> usize {
        self.p
    }

    fn combine(&self, increments: &[f64], y_rng: &mut impl Rng) -> Vec<f64> {
        let mut x = Vec::with_capacity(increments.len() + 1);
        x.push(0.0);
        let mut acc = 0.0;
        for d in increments {
            acc += d;
            x.push(acc);
        }
        let terms: Vec<f64> = self
            .pieces
            .iter()
            .map(|pc| {
                let dy = pc.var.sqrt() * y_rng.sample::<f64, _>(StandardNormal);
                self.f.eval(self.order, x[pc.block]) * dy
            })
            .collect();
        self.cut
            .iter()
            .map(|&c| self.scale * pairwise_sum(&terms[..c]))
            .collect()
    }

    /// One joint draw of `(Ξ_p(t))_{t ∈ t_list}`, with `X` and `Y` taken from `rng`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let incr = self.factor.sample_increments(rng);
        self.combine(&incr, rng)
    }

    /// Draws for replications `0..reps`: `X` from the replication streams of
    /// `seed`, `Y` from the auxiliary streams. Indexed `[rep][t]`.
    pub fn draw_many(&self, seed: u64, reps: usize) -> Vec<Vec<f64>> {
        self.factor.map_replications(seed, reps, |r, incr| {
            let mut aux = auxiliary_stream(seed, r as u64);
            self.combine(incr, &mut aux)
        })
    }

    /// `E[Ξ_p(t)²]` by Gauss–Hermite, for every `t`.
    pub fn exact_variance(&self, gh: &GaussHermite) -> Vec<f64> {
        block_variance(
            &self.f,
            self.order,
            self.scale,
            self.sd_unit,
            self.two_beta,
            &self.pieces,
            &self.cut,
            self.p,
            gh,
        )
    }

    /// As [`Self::exact_variance`] for `2p` blocks.
    pub fn exact_variance_refined(&self, gh: &GaussHermite) -> Vec<f64> {
        let (pieces, cut) = pieces_for(2 * self.p, self.gamma, &self.t_list);
        block_variance(
            &self.f,
            self.order,
            self.scale,
            self.sd_unit,
            self.two_beta,
            &pieces,
            &cut,
            2 * self.p,
            gh,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn block_variance(
    f: &SmoothFunction,
    order: usize,
    scale: f64,
    sd_unit: f64,
    two_beta: f64,
    pieces: &[Piece],
    cut: &[usize],
    p: usize,
    gh: &GaussHermite,
) -> Vec<f64> {
    let terms: Vec<f64> = pieces
        .iter()
        .map(|pc| {
            let s = pc.block as f64 / p as f64;
            let sd = sd_unit * s.powf(two_beta).sqrt();
            let m2 = gh.expect(|z| {
                let v = f.eval(order, sd * z);
                v * v
            });
            m2 * pc.var
        })
        .collect();
    cut.iter().map(|&c| scale * scale * pairwise_sum(&terms[..c])).collect()
}

/// One draw of `Ξ_p(t)`. Builds the block-grid factor on every call; use
/// [`LimitZSampler`] for repeated draws.
pub fn sample_limit_z<R: Rng>(
    model: &ProcessModel,
    f: &SmoothFunction,
    ell: u32,
    measure: &SymmetricMeasure,
    t: f64,
    p_blocks: usize,
    rng: &mut R,
) -> Result<f64> {
    let grid = GridSpec::new(p_blocks, t)?;
    let factor = crate::covariance::cholesky_factor(&crate::covariance::build_increment_covariance(model, grid)?)?;
    let s = LimitZSampler::new(model, f, ell, measure, &[t], factor, grid)?;
    Ok(s.draw(rng)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_increment_covariance, cholesky_factor};
    use crate::montecarlo::moments::Moments;
    use crate::rng::replication_stream;
    use crate::statistics::limit_variance_z;

    fn sampler(f: &SmoothFunction, t_list: &[f64], p: usize) -> LimitZSampler {
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let grid = GridSpec::new(p, 1.0).unwrap();
        let factor = cholesky_factor(&build_increment_covariance(&m, grid).unwrap()).unwrap();
        LimitZSampler::new(&m, f, 1, &SymmetricMeasure::trapezoid(), t_list, factor, grid).unwrap()
    }

    #[test]
    fn zero_and_unit_integrands() {
        let mut rng = replication_stream(3, 0);
        let lin = SmoothFunction::polynomial(vec![0.0, 1.0]);
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let trap = SymmetricMeasure::trapezoid();
        assert_eq!(sample_limit_z(&m, &lin, 1, &trap, 1.0, 16, &mut rng).unwrap(), 0.0);

        let cube = SmoothFunction::polynomial(vec![0.0, 0.0, 0.0, 1.0 / 6.0]);
        let s = sampler(&cube, &[0.3, 1.0], 64);
        let draws = s.draw_many(9, 100_000);
        let sigma2 = sigma_ell_series(&m, 1, 1e-12).unwrap().sigma2;
        for (i, t) in [0.3f64, 1.0].into_iter().enumerate() {
            let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            let mo = Moments::of(&col);
            let want = sigma2 / 144.0 * t;
            assert!((mo.variance - want).abs() < 0.02 * want, "{} vs {want}", mo.variance);
            assert!((s.exact_variance(&GaussHermite::new(32))[i] - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn sin_variance_matches_limit() {
        let sin = SmoothFunction::sin();
        let s = sampler(&sin, &[1.0], 256);
        let gh = GaussHermite::new(64);
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let limit = limit_variance_z(&m, &sin, 1, &SymmetricMeasure::trapezoid(), 1.0, 64).unwrap();
        let exact = s.exact_variance(&gh)[0];
        assert!((exact - limit).abs() < 0.02 * limit, "{exact} vs {limit}");
        let refined = s.exact_variance_refined(&gh)[0];
        assert!((refined - limit).abs() < (exact - limit).abs());
        let draws: Vec<f64> = s.draw_many(4, 100_000).into_iter().map(|d| d[0]).collect();
        let v = Moments::of(&draws).variance;
        assert!((v - limit).abs() < 0.02 * limit, "{v} vs {limit}");
    }

    #[test]
    fn off_grid_times_are_breakpoints() {
        let (pieces, cut) = pieces_for(8, 1.0, &[0.3, 1.0]);
        let var: f64 = pieces[..cut[0]].iter().map(|p| p.var).sum();
        assert!((var - 0.3).abs() < 1e-15);
        assert_eq!(pieces[cut[0] - 1].block, 2);
        let total: f64 = pieces.iter().map(|p| p.var).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
