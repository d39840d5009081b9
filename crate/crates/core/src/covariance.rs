//! Grid increment covariances, their Cholesky factors, path sampling, and
//! numerical audits of the covariance decay estimates.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::audit::{AuditCheck, AuditReport};
use crate::error::{Error, Result};
use crate::process::ProcessModel;
use crate::rng::replication_stream;

/// Default cap on the number of increments of a dense covariance.
pub const DEFAULT_MAX_INCREMENTS: usize = 16384;
/// Pivots below `-PIVOT_TOL` are rejected; pivots in `[-PIVOT_TOL, 0]` are
/// clamped to zero.
pub const PIVOT_TOL: f64 = 1e-10;
/// Positive pivots below this multiple of the largest diagonal entry are
/// roundoff in a numerically singular matrix and are clamped as well.
pub const PIVOT_NOISE: f64 = 1e-14;
/// Replications per sampling batch. Fixed so that results do not depend on
/// the worker count.
pub const SAMPLE_BATCH: usize = 32;

const BLOCK: usize = 128;
const CACHE_MAGIC: &[u8] = b"SSGLAB-FACTOR v1\n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub n: usize,
    pub horizon: f64,
    pub n_incr: usize,
}

impl GridSpec {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(format!("mesh n must be >= 2, got {n}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Parameter(format!("horizon must be > 0, got {horizon}")));
        }
        let n_incr = (n as f64 * horizon + 1e-9).floor() as usize;
        if n_incr < 1 {
            return Err(Error::Parameter(format!(
                "grid n = {n}, T = {horizon} has no increments"
            )));
        }
        Ok(GridSpec { n, horizon, n_incr })
    }

    /// Index `⌊n t⌋`, clipped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        ((self.n as f64 * t + 1e-9).floor().max(0.0) as usize).min(self.n_incr)
    }
}

/// Allocation-free evaluator of `⟨∂_{j/n}, ∂_{k/n}⟩`, used where the dense
/// matrix is not needed.
#[derive(Debug, Clone)]
pub struct IncrementKernel<'a> {
    model: &'a ProcessModel,
    scale: f64,
    phi1: f64,
    pow: Vec<f64>,
}

impl<'a> IncrementKernel<'a> {
    pub fn new(model: &'a ProcessModel, n: usize, n_incr: usize) -> Self {
        let p = 2.0 * model.beta();
        IncrementKernel {
            model,
            scale: (n as f64).powf(-p),
            phi1: model.phi_unchecked(1.0),
            pow: (0..=n_incr + 1).map(|j| (j as f64).powf(p)).collect(),
        }
    }

    /// `ξ²_{j,n} = E[(ΔX_{j/n})²]`.
    pub fn variance(&self, j: usize) -> f64 {
        if j == 0 {
            self.scale * self.phi1
        } else {
            self.scale * self.model.increment_variance(j as f64, 1.0)
        }
    }

    /// `⟨∂_{j/n}, ∂_{k/n}⟩` from second differences of `φ`.
    #[inline]
    pub fn entry(&self, j: usize, k: usize) -> f64 {
        let (j, k) = if j <= k { (j, k) } else { (k, j) };
        if j == k {
            return self.variance(j);
        }
        let m = self.model;
        let kf = k as f64;
        if j == 0 {
            return self.scale * m.phi_increment(kf, kf - 1.0, 1.0);
        }
        let j1 = (j + 1) as f64;
        let jf = j as f64;
        let upper = self.pow[j + 1] * m.phi_increment(kf / j1, (k - j - 1) as f64 / j1, 1.0 / j1);
        let lower = self.pow[j] * m.phi_increment(kf / jf, (k - j) as f64 / jf, 1.0 / jf);
        self.scale * (upper - lower)
    }

    /// `⟨ε̃_{j/n}, ∂_{j/n}⟩ = ½ E[X²_{(j+1)/n} - X²_{j/n}] = ½ φ(1)((j+1)^{2β} - j^{2β}) n^{-2β}`.
    pub fn eps_inner(&self, j: usize) -> f64 {
        let growth = if j == 0 {
            1.0
        } else {
            self.pow[j] * (2.0 * self.model.beta() * (1.0 / j as f64).ln_1p()).exp_m1()
        };
        0.5 * self.phi1 * growth * self.scale
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IncrementCovariance {
    pub grid: GridSpec,
    /// Row-major `N × N`.
    pub gram: Vec<f64>,
    pub xi: Vec<f64>,
    pub eps_inner: Vec<f64>,
}

impl IncrementCovariance {
    pub fn dim(&self) -> usize {
        self.grid.n_incr
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.gram[j * self.grid.n_incr + k]
    }

    /// Writes the matrix as CSV (`j,k,value`, upper triangle).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "j,k,value")?;
        let d = self.dim();
        for j in 0..d {
            for k in j..d {
                writeln!(w, "{j},{k},{:e}", self.get(j, k))?;
            }
        }
        Ok(())
    }
}

pub fn build_increment_covariance(model: &ProcessModel, grid: GridSpec) -> Result<IncrementCovariance> {
    build_increment_covariance_capped(model, grid, DEFAULT_MAX_INCREMENTS)
}

pub fn build_increment_covariance_capped(
    model: &ProcessModel,
    grid: GridSpec,
    cap: usize,
) -> Result<IncrementCovariance> {
    let d = grid.n_incr;
    if d > cap {
        return Err(Error::GridTooLarge { n_incr: d, cap });
    }
    let kernel = IncrementKernel::new(model, grid.n, d);
    let mut gram = vec![0.0; d * d];
    gram.par_chunks_mut(d).enumerate().for_each(|(j, row)| {
        for (k, v) in row.iter_mut().enumerate() {
            *v = kernel.entry(j, k);
        }
    });
    if let Some(bad) = gram.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite covariance entry at ({}, {})",
            bad / d,
            bad % d
        )));
    }
    let xi = (0..d).map(|j| gram[j * d + j].sqrt()).collect();
    let eps_inner = (0..d).map(|j| kernel.eps_inner(j)).collect();
    Ok(IncrementCovariance {
        grid,
        gram,
        xi,
        eps_inner,
    })
}

/// Lower Cholesky factor, row-major with zeros above the diagonal, possibly
/// in a permuted order.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerFactor {
    dim: usize,
    data: Vec<f64>,
    /// Row `i` of `data` belongs to increment `perm[i]`.
    perm: Option<Vec<usize>>,
    clamped: usize,
    min_pivot: f64,
}

/// `C[m×n] += alpha · A[m×k] · B[k×n]` with explicit strides.
///
/// # Safety
/// The pointers must address the stated matrices and `c` must not overlap
/// `a` or `b`.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    rsa: usize,
    csa: usize,
    b: *const f64,
    rsb: usize,
    csb: usize,
    c: *mut f64,
    rsc: usize,
    csc: usize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    matrixmultiply::dgemm(
        m,
        k,
        n,
        alpha,
        a,
        rsa as isize,
        csa as isize,
        b,
        rsb as isize,
        csb as isize,
        1.0,
        c,
        rsc as isize,
        csc as isize,
    );
}

/// Blocked right-looking Cholesky without pivoting. Returns `None` as soon
/// as a pivot falls to the roundoff level, leaving the decision to the
/// pivoted fallback.
fn cholesky_blocked(mut a: Vec<f64>, d: usize) -> Option<LowerFactor> {
    let max_diag = (0..d).map(|i| a[i * d + i]).fold(0.0_f64, f64::max);
    let noise = PIVOT_NOISE * max_diag;
    let mut min_pivot = f64::INFINITY;

    for kb in (0..d).step_by(BLOCK) {
        let ke = (kb + BLOCK).min(d);
        // Diagonal block.
        for j in kb..ke {
            let mut s = a[j * d + j];
            for p in kb..j {
                s -= a[j * d + p] * a[j * d + p];
            }
            min_pivot = min_pivot.min(s);
            if s <= noise {
                return None;
            }
            let ljj = s.sqrt();
            a[j * d + j] = ljj;
            for i in j + 1..ke {
                let mut v = a[i * d + j];
                for p in kb..j {
                    v -= a[i * d + p] * a[j * d + p];
                }
                a[i * d + j] = if ljj > 0.0 { v / ljj } else { 0.0 };
            }
        }
        if ke == d {
            break;
        }
        // Panel below the diagonal block, row by row.
        let (head, tail) = a.split_at_mut(ke * d);
        let diag = &head[kb * d..];
        tail.par_chunks_mut(d).for_each(|row| {
            for j in kb..ke {
                let ljj = diag[(j - kb) * d + j];
                let mut v = row[j];
                for p in kb..j {
                    v -= row[p] * diag[(j - kb) * d + p];
                }
                row[j] = if ljj > 0.0 { v / ljj } else { 0.0 };
            }
        });
        // Trailing update of the lower part, one row block at a time.
        let width = ke - kb;
        let base = a.as_mut_ptr();
        for ib in (ke..d).step_by(BLOCK) {
            let ie = (ib + BLOCK).min(d);
            // SAFETY: A = rows ib..ie, cols kb..ke; B = (rows ke..ie, cols kb..ke)^T;
            // C = rows ib..ie, cols ke..ie. C's columns are >= ke, so it is
            // disjoint from A and B.
            unsafe {
                gemm(
                    ie - ib,
                    width,
                    ie - ke,
                    -1.0,
                    base.add(ib * d + kb),
                    d,
                    1,
                    base.add(ke * d + kb),
                    1,
                    d,
                    base.add(ib * d + ke),
                    d,
                    1,
                );
            }
        }
    }
    for i in 0..d {
        for v in &mut a[i * d + i + 1..(i + 1) * d] {
            *v = 0.0;
        }
    }
    Some(LowerFactor {
        dim: d,
        data: a,
        perm: None,
        clamped: 0,
        min_pivot,
    })
}

/// Left-looking Cholesky with diagonal pivoting, `P A Pᵀ = L Lᵀ`. Stops when
/// the largest remaining pivot is at the roundoff level and clamps the rest
/// to zero; a remaining pivot below `-PIVOT_TOL` is an error.
fn cholesky_pivoted(a: &[f64], d: usize) -> Result<LowerFactor> {
    let max_diag = (0..d).map(|i| a[i * d + i]).fold(0.0_f64, f64::max);
    let noise = PIVOT_NOISE * max_diag;
    let mut perm: Vec<usize> = (0..d).collect();
    let mut diag: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    let mut l = vec![0.0; d * d];
    let mut min_pivot = f64::INFINITY;
    let mut clamped = 0;
    for k in 0..d {
        let p = (k..d)
            .max_by(|&x, &y| diag[x].total_cmp(&diag[y]))
            .expect("nonempty range");
        if p != k {
            perm.swap(k, p);
            diag.swap(k, p);
            for m in 0..k {
                l.swap(k * d + m, p * d + m);
            }
        }
        let s = diag[k];
        min_pivot = min_pivot.min(s);
        if s < -PIVOT_TOL {
            return Err(Error::NotPsd {
                index: perm[k],
                pivot: s,
            });
        }
        if s <= noise {
            clamped = d - k;
            break;
        }
        let lkk = s.sqrt();
        l[k * d + k] = lkk;
        let (head, tail) = l.split_at_mut((k + 1) * d);
        let lk = &head[k * d..k * d + k];
        let pk = perm[k];
        let perm_ref = &perm;
        tail.par_chunks_mut(d).enumerate().for_each(|(off, row)| {
            let i = k + 1 + off;
            let dot: f64 = row[..k].iter().zip(lk).map(|(x, y)| x * y).sum();
            row[k] = (a[perm_ref[i] * d + pk] - dot) / lkk;
        });
        for i in k + 1..d {
            let v = l[i * d + k];
            diag[i] -= v * v;
        }
    }
    // Identity permutations are stored as `None` so both paths agree.
    let identity = perm.iter().enumerate().all(|(i, &p)| i == p);
    Ok(LowerFactor {
        dim: d,
        data: l,
        perm: if identity { None } else { Some(perm) },
        clamped,
        min_pivot,
    })
}

/// Cholesky factor of a symmetric positive semidefinite row-major matrix.
/// Well-conditioned matrices take the blocked path; numerically singular ones
/// fall back to diagonal pivoting with rank truncation.
pub fn cholesky_dense(a: &[f64], d: usize) -> Result<LowerFactor> {
    assert_eq!(a.len(), d * d, "matrix storage does not match dimension");
    match cholesky_blocked(a.to_vec(), d) {
        Some(l) => Ok(l),
        None => cholesky_pivoted(a, d),
    }
}

pub fn cholesky_factor(cov: &IncrementCovariance) -> Result<LowerFactor> {
    cholesky_dense(&cov.gram, cov.dim())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub seed_id: u64,
}

impl PathSample {
    pub fn from_increments(grid: GridSpec, increments: &[f64], seed_id: u64) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for &d in increments {
            acc += d;
            values.push(acc);
        }
        PathSample { grid, values, seed_id }
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

impl LowerFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Number of pivots clamped to zero.
    pub fn clamped_pivots(&self) -> usize {
        self.clamped
    }

    /// Smallest pivot seen before clamping.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Increment index of factor row `i`.
    #[inline]
    pub fn row_index(&self, i: usize) -> usize {
        self.perm.as_ref().map_or(i, |p| p[i])
    }

    pub fn is_pivoted(&self) -> bool {
        self.perm.is_some()
    }

    /// `max |L Lᵀ - P A Pᵀ|` over the lower triangle.
    pub fn reconstruction_error(&self, a: &[f64]) -> f64 {
        let d = self.dim;
        (0..d)
            .into_par_iter()
            .map(|i| {
                let li = &self.data[i * d..i * d + i + 1];
                let mut m = 0.0_f64;
                for j in 0..=i {
                    let lj = &self.data[j * d..j * d + j + 1];
                    let s: f64 = li[..=j].iter().zip(lj).map(|(x, y)| x * y).sum();
                    let (pi, pj) = (self.row_index(i), self.row_index(j));
                    m = m.max((s - a[pi * d + pj]).abs());
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Increments `L z` for a batch of standard-normal vectors stored
    /// row-wise in `z` (`batch × dim`). Returns `batch × dim`.
    pub fn apply_batch(&self, z: &[f64], batch: usize) -> Vec<f64> {
        let d = self.dim;
        assert_eq!(z.len(), batch * d, "batch storage does not match dimension");
        let mut out = vec![0.0; batch * d];
        for ib in (0..d).step_by(BLOCK * 2) {
            let ie = (ib + BLOCK * 2).min(d);
            // out[:, ib..ie] = z[:, 0..ie] · L[ib..ie, 0..ie]ᵀ
            // SAFETY: z and data are read-only inputs; out is a distinct buffer.
            unsafe {
                gemm(
                    batch,
                    ie,
                    ie - ib,
                    1.0,
                    z.as_ptr(),
                    d,
                    1,
                    self.data.as_ptr().add(ib * d),
                    1,
                    d,
                    out.as_mut_ptr().add(ib),
                    d,
                    1,
                );
            }
        }
        if let Some(perm) = &self.perm {
            let mut row = vec![0.0; d];
            for b in 0..batch {
                let chunk = &mut out[b * d..(b + 1) * d];
                for (i, &p) in perm.iter().enumerate() {
                    row[p] = chunk[i];
                }
                chunk.copy_from_slice(&row);
            }
        }
        out
    }

    /// Draws `dim` standard normals from `rng` and returns the increments.
    pub fn sample_increments<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        self.apply_batch(&z, 1)
    }

    /// Increments for replications `0..reps` of `seed`, handed to `f` in
    /// replication order. Batches are fixed-size and run on the current
    /// rayon pool; each replication reads only its own stream.
    pub fn map_replications<T, F>(&self, seed: u64, reps: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &[f64]) -> T + Sync,
    {
        let d = self.dim;
        let batches: Vec<usize> = (0..reps.div_ceil(SAMPLE_BATCH)).collect();
        batches
            .into_par_iter()
            .flat_map_iter(|b| {
                let r0 = b * SAMPLE_BATCH;
                let r1 = (r0 + SAMPLE_BATCH).min(reps);
                let mut z = Vec::with_capacity((r1 - r0) * d);
                for r in r0..r1 {
                    let mut rng = replication_stream(seed, r as u64);
                    z.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                }
                let incr = self.apply_batch(&z, r1 - r0);
                (r0..r1)
                    .map(|r| f(r, &incr[(r - r0) * d..(r - r0 + 1) * d]))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Writes the factor with a version header and a key line.
    pub fn save(&self, path: &Path, key: &str) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        writeln!(w, "{key}")?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for i in 0..self.dim {
            w.write_all(&(self.row_index(i) as u64).to_le_bytes())?;
        }
        for i in 0..self.dim {
            for v in &self.data[i * self.dim..i * self.dim + i + 1] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a factor written by [`LowerFactor::save`]; `Ok(None)` when the
    /// header or key does not match.
    pub fn load(path: &Path, key: &str) -> Result<Option<Self>> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let Some(rest) = bytes.strip_prefix(CACHE_MAGIC) else {
            return Ok(None);
        };
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Ok(None);
        };
        if &rest[..nl] != key.as_bytes() {
            return Ok(None);
        }
        let body = &rest[nl + 1..];
        if body.len() < 8 {
            return Ok(None);
        }
        let d = u64::from_le_bytes(body[..8].try_into().expect("8 bytes")) as usize;
        if body.len() != 8 + d * 8 + d * (d + 1) / 2 * 8 {
            return Ok(None);
        }
        let perm: Vec<usize> = body[8..8 + d * 8]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let vals = &body[8 + d * 8..];
        let mut data = vec![0.0; d * d];
        let mut it = vals
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for i in 0..d {
            for v in &mut data[i * d..i * d + i + 1] {
                *v = it.next().expect("length checked");
            }
        }
        let identity = perm.iter().enumerate().all(|(i, &p)| i == p);
        Ok(Some(LowerFactor {
            dim: d,
            data,
            perm: if identity { None } else { Some(perm) },
            clamped: 0,
            min_pivot: f64::NAN,
        }))
    }
}

/// Cache key for a factor of `model` on `grid`.
pub fn factor_cache_key(model: &ProcessModel, grid: &GridSpec) -> String {
    format!("{}|n={}|T={}", model.spec(), grid.n, grid.horizon)
}

/// Factor for `(model, grid)`, read from `cache_dir` when present and written
/// there otherwise.
pub fn cached_factor(model: &ProcessModel, grid: GridSpec, cache_dir: Option<&Path>) -> Result<LowerFactor> {
    let key = factor_cache_key(model, &grid);
    let file = cache_dir.map(|dir| {
        use sha2::{Digest, Sha256};
        let h = hex::encode(Sha256::digest(key.as_bytes()));
        dir.join(format!("factor-{}.bin", &h[..16]))
    });
    if let Some(f) = &file {
        if f.exists() {
            if let Some(l) = LowerFactor::load(f, &key)? {
                return Ok(l);
            }
        }
    }
    let l = cholesky_factor(&build_increment_covariance(model, grid)?)?;
    if let Some(f) = &file {
        if let Some(dir) = f.parent() {
            fs::create_dir_all(dir)?;
        }
        l.save(f, &key)?;
    }
    Ok(l)
}

#[derive(Debug, Default, Clone, Copy)]
struct RowStats {
    covpartial1: f64,
    covpartial2: f64,
    abs_row_sum: f64,
}

impl RowStats {
    fn merge(self, o: RowStats) -> RowStats {
        RowStats {
            covpartial1: self.covpartial1.max(o.covpartial1),
            covpartial2: self.covpartial2.max(o.covpartial2),
            abs_row_sum: self.abs_row_sum.max(o.abs_row_sum),
        }
    }
}

/// Normalized suprema of the increment-covariance estimates, one sequence
/// per estimate over `n_list` (constants set to 1):
///
/// - `ecua1`: `ξ²_{j,n} n^{2β} j^{α-2β}`, `j >= 1`
/// - `varpartial`: `ξ²_{j,n} n^α`
/// - `covpartial1`: `|⟨∂_j,∂_k⟩| n^{2β} j^{α-2β} k^{2-α}`, `j+3 <= k <= 2j+2`
/// - `covpartial2`: `|⟨∂_j,∂_k⟩| n^{2β} j^{2-2β-ν} k^ν`, `k >= 2j+2`
/// - `partialjkbound`: `n^α sup_k Σ_j |⟨∂_j,∂_k⟩|`
/// - `covpartialepsilon`: `n^{4β} Σ_j |⟨ε̃_j,∂_j⟩|³`
/// - `variance_residual`: `|ξ²_{j,1} - 2λ j^{2β-α}| / j^{2β-1}`, `1 <= j < N`
///
/// A sequence passes when its maximum is at most 10 times its first value.
pub fn inequality_audit(model: &ProcessModel, n_list: &[usize], horizon: f64) -> Result<AuditReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] < 6 {
        return Err(Error::Parameter("n_list must be increasing with every n >= 6".into()));
    }
    let alpha = model.alpha();
    let beta2 = 2.0 * model.beta();
    let nu = model.nu_decay();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 7];
    for &n in n_list {
        let grid = GridSpec::new(n, horizon)?;
        let d = grid.n_incr;
        let kern = IncrementKernel::new(model, n, d);
        let nf = n as f64;
        let var: Vec<f64> = (0..d).map(|j| kern.variance(j)).collect();

        let ecua1 = (1..d)
            .map(|j| var[j] * nf.powf(beta2) * (j as f64).powf(alpha - beta2))
            .fold(0.0, f64::max);
        let varpartial = var.iter().map(|v| v * nf.powf(alpha)).fold(0.0, f64::max);

        let rows = (0..d)
            .into_par_iter()
            .map(|j| {
                let jf = j as f64;
                let mut st = RowStats::default();
                let mut sum = 0.0;
                for k in 0..d {
                    let g = if k == j { var[j] } else { kern.entry(j, k) };
                    sum += g.abs();
                    if j >= 1 && k > j {
                        let kf = k as f64;
                        if k >= j + 3 && k <= 2 * j + 2 {
                            let v = g.abs() * nf.powf(beta2) * jf.powf(alpha - beta2) * kf.powf(2.0 - alpha);
                            st.covpartial1 = st.covpartial1.max(v);
                        }
                        if k >= 2 * j + 2 {
                            let v = g.abs() * nf.powf(beta2) * jf.powf(2.0 - beta2 - nu) * kf.powf(nu);
                            st.covpartial2 = st.covpartial2.max(v);
                        }
                    }
                }
                st.abs_row_sum = sum;
                st
            })
            .reduce(RowStats::default, RowStats::merge);

        let eps3: f64 = (0..d).map(|j| kern.eps_inner(j).abs().powi(3)).sum();
        let variance_resid = (1..d.max(2))
            .map(|j| {
                let jf = j as f64;
                let v = model.increment_variance(jf, 1.0);
                (v - 2.0 * model.lambda() * jf.powf(beta2 - alpha)).abs() / jf.powf(beta2 - 1.0)
            })
            .fold(0.0, f64::max);

        cols[0].push(ecua1);
        cols[1].push(varpartial);
        cols[2].push(rows.covpartial1);
        cols[3].push(rows.covpartial2);
        cols[4].push(rows.abs_row_sum * nf.powf(alpha));
        cols[5].push(eps3 * nf.powf(2.0 * beta2));
        cols[6].push(variance_resid);
    }
    let labels: Vec<String> = n_list.iter().map(|n| n.to_string()).collect();
    let names = [
        "ecua1",
        "varpartial",
        "covpartial1",
        "covpartial2",
        "partialjkbound",
        "covpartialepsilon",
        "variance_residual",
    ];
    let checks = names
        .iter()
        .zip(cols)
        .map(|(name, values)| {
            // The residual vanishes identically for stationary increments.
            let floor = if *name == "variance_residual" { 1e-9 } else { 0.0 };
            AuditCheck::bounded_with_floor(name, labels.clone(), values, 10.0, floor)
        })
        .collect();
    Ok(AuditReport::new(format!("inequalities {}", model.spec()), checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fbm_stationary(h: f64, n: usize, j: usize, k: usize) -> f64 {
        let m = (k as f64 - j as f64).abs();
        let e = 2.0 * h;
        0.5 * (n as f64).powf(-e) * ((m + 1.0).powf(e) + (m - 1.0).abs().powf(e) - 2.0 * m.powf(e))
    }

    #[test]
    fn grid_spec() {
        let g = GridSpec::new(256, 1.0).unwrap();
        assert_eq!(g.n_incr, 256);
        assert_eq!(GridSpec::new(10, 0.35).unwrap().n_incr, 3);
        assert!(GridSpec::new(1, 1.0).is_err());
        assert!(GridSpec::new(4, 0.1).is_err());
        assert_eq!(g.index_of(0.5), 128);
        assert_eq!(g.index_of(2.0), 256);
    }

    #[test]
    fn fbm_matches_stationary_formula() {
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let n = 64;
        let c = build_increment_covariance(&m, GridSpec::new(n, 1.0).unwrap()).unwrap();
        for j in 0..n {
            for k in 0..n {
                let want = fbm_stationary(1.0 / 6.0, n, j, k);
                let got = c.get(j, k);
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(c.get(0, 0) * 1e-3),
                    "({j},{k}) {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn basic_invariants() {
        let m = ProcessModel::subfractional(0.3).unwrap();
        let n = 40;
        let c = build_increment_covariance(&m, GridSpec::new(n, 1.5).unwrap()).unwrap();
        let d = c.dim();
        assert_eq!(d, 60);
        assert!((c.get(0, 0) - (n as f64).powf(-0.6) * m.phi(1.0).unwrap()).abs() < 1e-15);
        let mut eps_sum = 0.0;
        for j in 0..d {
            assert_eq!(c.xi[j] * c.xi[j], c.get(j, j).sqrt().powi(2));
            let psi_n = ((j + 1) as f64 / n as f64).powf(0.6) - (j as f64 / n as f64).powf(0.6);
            let direct = 0.5 * m.phi(1.0).unwrap() * psi_n;
            let half_diff = 0.5
                * (m.covariance((j + 1) as f64 / n as f64, (j + 1) as f64 / n as f64)
                    .unwrap()
                    - m.covariance(j as f64 / n as f64, j as f64 / n as f64).unwrap());
            // The literal difference of powers loses about log10(j) digits.
            let tol = 1e-14 * (1.0 + j as f64) * direct;
            assert!((c.eps_inner[j] - direct).abs() <= tol, "{j}");
            assert!((c.eps_inner[j] - half_diff).abs() <= tol, "{j}");
            eps_sum += c.eps_inner[j];
            for k in 0..d {
                assert_eq!(c.get(j, k), c.get(k, j));
                assert!(c.get(j, k).abs() <= c.xi[j] * c.xi[k] * (1.0 + 1e-12));
            }
        }
        let half_var = 0.5 * m.covariance(1.5, 1.5).unwrap();
        assert!((eps_sum - half_var).abs() < 1e-13);
    }

    #[test]
    fn cholesky_reconstructs() {
        for model in [
            ProcessModel::fbm(1.0 / 6.0).unwrap(),
            ProcessModel::dw_z2(1.0 / 3.0).unwrap(),
            ProcessModel::swanson(),
        ] {
            let c = build_increment_covariance(&model, GridSpec::new(300, 1.0).unwrap()).unwrap();
            let l = cholesky_factor(&c).unwrap();
            let err = l.reconstruction_error(&c.gram);
            let max_diag = (0..c.dim()).map(|j| c.get(j, j)).fold(0.0, f64::max);
            assert!(err <= 1e-10 * max_diag, "{model:?}: {err}");
            for i in 0..c.dim() {
                for j in i + 1..c.dim() {
                    assert_eq!(l.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_increment_factor() {
        let m = ProcessModel::fbm(0.25).unwrap();
        let c = build_increment_covariance(&m, GridSpec::new(4, 0.25).unwrap()).unwrap();
        let l = cholesky_factor(&c).unwrap();
        assert_eq!(l.dim(), 1);
        assert!((l.get(0, 0) - (4f64.powf(-0.5)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        let e = cholesky_dense(&a, 2).unwrap_err();
        assert!(matches!(e, Error::NotPsd { .. }), "{e}");
        // Rank-deficient PSD matrix: pivot is clamped, not rejected.
        let l = cholesky_dense(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(l.clamped_pivots(), 1);
    }

    #[test]
    fn batch_matches_matvec() {
        let m = ProcessModel::bifractional(0.4, 0.5).unwrap();
        let c = build_increment_covariance(&m, GridSpec::new(300, 1.0).unwrap()).unwrap();
        let l = cholesky_factor(&c).unwrap();
        let d = l.dim();
        let z: Vec<f64> = (0..3 * d).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let out = l.apply_batch(&z, 3);
        for b in 0..3 {
            for i in (0..d).step_by(37) {
                let want: f64 = (0..=i).map(|j| l.get(i, j) * z[b * d + j]).sum();
                assert!((out[b * d + i] - want).abs() < 1e-12, "{b} {i}");
            }
        }
    }

    #[test]
    fn replication_sampling_is_deterministic() {
        let m = ProcessModel::fbm(0.2).unwrap();
        let c = build_increment_covariance(&m, GridSpec::new(50, 1.0).unwrap()).unwrap();
        let l = cholesky_factor(&c).unwrap();
        let a = l.map_replications(11, 70, |_, x| x.to_vec());
        let b = l.map_replications(11, 70, |_, x| x.to_vec());
        assert_eq!(a, b);
        let single = l.sample_increments(&mut replication_stream(11, 69));
        for (x, y) in single.iter().zip(&a[69]) {
            assert!((x - y).abs() < 1e-14);
        }
        let p = PathSample::from_increments(c.grid, &a[0], 0);
        assert_eq!(p.values[0], 0.0);
        assert_eq!(p.values.len(), 51);
    }

    #[test]
    fn factor_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ProcessModel::fbm(0.3).unwrap();
        let g = GridSpec::new(20, 1.0).unwrap();
        let a = cached_factor(&m, g, Some(dir.path())).unwrap();
        let b = cached_factor(&m, g, Some(dir.path())).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(a.get(i, j), b.get(i, j));
            }
        }
        let csv = dir.path().join("gram.csv");
        build_increment_covariance(&m, g).unwrap().write_csv(&csv).unwrap();
        let text = fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("j,k,value\n"));
        assert_eq!(text.lines().count(), 1 + 20 * 21 / 2);
    }

    #[test]
    fn audit_fbm_small() {
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let r = inequality_audit(&m, &[32, 64, 128, 256], 1.0).unwrap();
        for name in [
            "ecua1",
            "varpartial",
            "covpartial2",
            "partialjkbound",
            "covpartialepsilon",
            "variance_residual",
        ] {
            assert!(r.check(name).unwrap().pass, "{name}: {r:#?}");
        }
        // Near the diagonal (k = j + 3) the covariance of fBm increments is of
        // order n^{-2H}, while the k^{α-2} envelope decays, so the normalized
        // supremum grows like n^{2-α}.
        let c1 = r.check("covpartial1").unwrap();
        assert!(!c1.pass);
        let growth = c1.values[3] / c1.values[2];
        assert!((growth - 2f64.powf(5.0 / 3.0)).abs() < 0.1, "{growth}");
        assert!(inequality_audit(&m, &[64, 32], 1.0).is_err());
    }

    #[test]
    fn near_diagonal_lag_envelope_is_bounded_for_fbm() {
        // Same range as covpartial1, with (k - j)^{α-2} in place of k^{α-2}.
        let m = ProcessModel::fbm(1.0 / 6.0).unwrap();
        let alpha = m.alpha();
        let mut sups = Vec::new();
        for n in [64usize, 256, 1024] {
            let kern = IncrementKernel::new(&m, n, n);
            let mut sup = 0.0_f64;
            for j in 1..n {
                for k in (j + 3)..=(2 * j + 2).min(n - 1) {
                    let v = kern.entry(j, k).abs() * (n as f64).powf(alpha) * ((k - j) as f64).powf(2.0 - alpha);
                    sup = sup.max(v);
                }
            }
            sups.push(sup);
        }
        assert!(sups.iter().all(|&s| s <= 2.0 * sups[0]), "{sups:?}");
    }
}
