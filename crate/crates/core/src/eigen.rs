//! Generalized symmetric eigenproblem K phi = omega^2 M phi for the lowest modes.
//!
//! Small systems use a dense Cholesky reduction. Larger ones use a restarted block Krylov
//! iteration on the shift-inverted operator (K - sigma M)^-1 M with sigma < 0, so rigid-body
//! modes of free plates stay well defined.

use crate::assembly::SparseMat;
use crate::error::{PlateError, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::Triplet;
use faer::{Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenOptions {
    pub n_modes: usize,
    /// Largest size handled by the dense path.
    pub dense_limit: usize,
    /// Backward-error tolerance of accepted pairs.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { n_modes: 6, dense_limit: 3000, tol: 1e-12, max_iter: 300, seed: 0x5eed }
    }
}

/// Lowest eigenpairs, M-orthonormal, each with its largest-magnitude entry positive.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPairs {
    /// omega^2, ascending.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// ||K phi - omega^2 M phi|| / ||K phi||
    pub residuals: Vec<f64>,
}

impl EigenPairs {
    pub fn frequencies(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn spmv(a: &SparseMat, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (&i, &v) in a.symbolic().row_idx_of_col_raw(j).iter().zip(a.val_of_col(j)) {
            y[i] += v * xj;
        }
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// x^T A y
pub fn bilinear(a: &SparseMat, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &spmv(a, y))
}

/// A + s B as a new sparse matrix.
pub fn add_scaled(a: &SparseMat, b: &SparseMat, s: f64) -> Result<SparseMat> {
    let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(a.compute_nnz() + b.compute_nnz());
    for (mat, f) in [(a, 1.0), (b, s)] {
        for j in 0..mat.ncols() {
            for (&i, &v) in mat.symbolic().row_idx_of_col_raw(j).iter().zip(mat.val_of_col(j)) {
                t.push(Triplet::new(i, j, f * v));
            }
        }
    }
    SparseMat::try_new_from_triplets(a.nrows(), a.ncols(), &t).map_err(|e| PlateError::Numerical(format!("{e:?}")))
}

/// Column-sum norm of a sparse matrix.
pub fn norm1(a: &SparseMat) -> f64 {
    (0..a.ncols()).map(|j| a.val_of_col(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Backward error ||K x - value M x|| / ((nk + |value| nm) ||x||) for matrix norms nk, nm.
pub fn backward_error(k: &SparseMat, m: &SparseMat, nk: f64, nm: f64, value: f64, x: &[f64]) -> f64 {
    let kx = spmv(k, x);
    let mx = spmv(m, x);
    let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - value * b).collect();
    norm(&r) / ((nk + value.abs() * nm) * norm(x)).max(f64::MIN_POSITIVE)
}

/// ||K x - value M x|| / ||K x||, or the absolute residual when K x vanishes.
pub fn relative_residual(k: &SparseMat, m: &SparseMat, value: f64, x: &[f64]) -> f64 {
    let kx = spmv(k, x);
    let mx = spmv(m, x);
    let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - value * b).collect();
    let nk = norm(&kx);
    if nk > 0.0 {
        norm(&r) / nk
    } else {
        norm(&r)
    }
}

pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best * (1.0 + 1e-12) {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn check_inputs(k: &SparseMat, m: &SparseMat, n_modes: usize) -> Result<()> {
    let n = k.nrows();
    if k.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(PlateError::Argument("K and M must be square and of equal size".into()));
    }
    if n_modes == 0 || n_modes > n {
        return Err(PlateError::Argument(format!("requested {n_modes} modes from a system of size {n}")));
    }
    Ok(())
}

/// Lowest `n_modes` eigenpairs by dense Cholesky reduction.
pub fn dense_eigen(k: &SparseMat, m: &SparseMat, n_modes: usize) -> Result<EigenPairs> {
    check_inputs(k, m, n_modes)?;
    let n = k.nrows();
    let md = m.to_dense();
    let llt = md
        .llt(Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("mass matrix is not positive definite: {e:?}")))?;
    let l = llt.L();
    let mut x = k.to_dense();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, x.as_mut(), Par::rayon(0));
    let mut c = x.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), Par::rayon(0));
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("dense eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let mut y = evd.U().subcols(0, n_modes).to_owned();
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(l.transpose(), y.as_mut(), Par::rayon(0));
    let mut out = EigenPairs { values: Vec::new(), vectors: Vec::new(), residuals: Vec::new() };
    for j in 0..n_modes {
        let mut v: Vec<f64> = (0..n).map(|i| y[(i, j)]).collect();
        fix_sign(&mut v);
        out.residuals.push(relative_residual(k, m, s[j], &v));
        out.values.push(s[j]);
        out.vectors.push(v);
    }
    Ok(out)
}

/// All generalized eigenvalues, ascending (dense, for verification).
pub fn dense_eigenvalues(k: &SparseMat, m: &SparseMat) -> Result<Vec<f64>> {
    Ok(dense_eigen(k, m, k.nrows())?.values)
}

/// Lowest eigenpairs; dense path up to `dense_limit`, block Krylov shift-invert above it.
pub fn solve_eigen(k: &SparseMat, m: &SparseMat, opts: &EigenOptions) -> Result<EigenPairs> {
    check_inputs(k, m, opts.n_modes)?;
    let n = k.nrows();
    let block = (2 * opts.n_modes).max(opts.n_modes + 8);
    if n <= opts.dense_limit || n <= 4 * block {
        return dense_eigen(k, m, opts.n_modes);
    }
    krylov_eigen(k, m, opts, block)
}

/// Eigenpairs from the lowest mode up to every mode with frequency in [lo - margin, hi + margin].
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub pairs: EigenPairs,
    pub band: [f64; 2],
    pub margin: f64,
}

impl Spectrum {
    pub fn frequencies(&self) -> Vec<f64> {
        self.pairs.frequencies()
    }

    /// Mode indices with frequency inside the band itself.
    pub fn in_band(&self) -> Vec<usize> {
        self.frequencies()
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= self.band[0] && f <= self.band[1])
            .map(|(i, _)| i)
            .collect()
    }

    /// Mode indices inside the band widened by the margin.
    pub fn in_widened_band(&self) -> Vec<usize> {
        self.frequencies()
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= self.band[0] - self.margin && f <= self.band[1] + self.margin)
            .map(|(i, _)| i)
            .collect()
    }
}

/// All modes up to frequency hi + margin (at least `min_modes` when available).
pub fn solve_band(k: &SparseMat, m: &SparseMat, lo: f64, hi: f64, margin: f64, opts: &EigenOptions) -> Result<Spectrum> {
    if !(lo >= 0.0 && hi > lo && margin >= 0.0) {
        return Err(PlateError::Argument(format!("invalid band [{lo}, {hi}] with margin {margin}")));
    }
    let n = k.nrows();
    let top = (hi + margin).powi(2);
    let mut want = opts.n_modes.clamp(1, n);
    loop {
        let pairs = solve_eigen(k, m, &EigenOptions { n_modes: want, ..opts.clone() })?;
        let last = *pairs.values.last().unwrap_or(&0.0);
        if last > top || want == n {
            let keep = pairs.values.iter().filter(|&&v| v <= top).count().max(opts.n_modes.min(n));
            let pairs = EigenPairs {
                values: pairs.values[..keep].to_vec(),
                vectors: pairs.vectors[..keep].to_vec(),
                residuals: pairs.residuals[..keep].to_vec(),
            };
            return Ok(Spectrum { pairs, band: [lo, hi], margin });
        }
        want = (2 * want).min(n);
    }
}

/// Scales each vector to unit M-norm and M-orthonormalizes clusters whose eigenvalues agree
/// within `cluster_tol` relative.
pub fn mass_normalize(pairs: &mut EigenPairs, m: &SparseMat, cluster_tol: f64) -> Result<()> {
    let count = pairs.values.len();
    let mut start = 0;
    while start < count {
        let mut end = start + 1;
        while end < count
            && (pairs.values[end] - pairs.values[end - 1]).abs() <= cluster_tol * pairs.values[end].abs().max(1e-300)
        {
            end += 1;
        }
        let mut done: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for j in start..end {
            let v = std::mem::take(&mut pairs.vectors[j]);
            let (q, mq) = m_orthonormalize(m, &done, v)
                .ok_or_else(|| PlateError::Numerical(format!("mode {j} has zero mass norm")))?;
            pairs.vectors[j] = q.clone();
            done.push((q, mq));
        }
        start = end;
    }
    for v in &mut pairs.vectors {
        fix_sign(v);
    }
    Ok(())
}

/// M-orthonormalizes `v` against `basis` (two passes); None when it is dependent.
fn m_orthonormalize(m: &SparseMat, basis: &[(Vec<f64>, Vec<f64>)], mut v: Vec<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
    let n0 = spmv(m, &v);
    let norm0 = dot(&v, &n0).max(0.0).sqrt();
    if norm0 == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for (b, mb) in basis {
            let c = dot(&v, mb);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let mv = spmv(m, &v);
    let nv = dot(&v, &mv).max(0.0).sqrt();
    if nv <= 1e-10 * norm0 {
        return None;
    }
    let inv = 1.0 / nv;
    Some((v.iter().map(|x| x * inv).collect(), mv.iter().map(|x| x * inv).collect()))
}

fn krylov_eigen(k: &SparseMat, m: &SparseMat, opts: &EigenOptions, block: usize) -> Result<EigenPairs> {
    let n = k.nrows();
    let diag_ratio = (0..n)
        .map(|j| {
            let kd = diag_entry(k, j);
            let md = diag_entry(m, j);
            if md > 0.0 {
                kd / md
            } else {
                0.0
            }
        })
        .fold(0.0f64, f64::max);
    let sigma = -1e-8 * diag_ratio.max(f64::MIN_POSITIVE);
    let shifted = add_scaled(k, m, -sigma)?;
    let llt = shifted
        .sp_cholesky(Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("shifted stiffness factorization failed: {e:?}")))?;
    let apply = |x: &[f64]| -> Vec<f64> {
        let mx = spmv(m, x);
        let mut r = Mat::<f64>::from_fn(n, 1, |i, _| mx[i]);
        llt.solve_in_place(r.as_mut());
        (0..n).map(|i| r[(i, 0)]).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..block).map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
    let steps = 3;
    let (nk, nm) = (norm1(k), norm1(m));
    for _ in 0..opts.max_iter {
        let mut basis: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut current = x;
        for s in 0..steps {
            let mut accepted = Vec::new();
            for v in current {
                let v = if s == 0 { v } else { apply(&v) };
                if let Some(q) = m_orthonormalize(m, &basis, v) {
                    accepted.push(q.0.clone());
                    basis.push(q);
                }
            }
            current = accepted;
        }
        let nb = basis.len();
        if nb < opts.n_modes {
            return Err(PlateError::Numerical("Krylov basis collapsed below the requested mode count".into()));
        }
        let kb: Vec<Vec<f64>> = basis.iter().map(|(b, _)| spmv(k, b)).collect();
        let a = Mat::from_fn(nb, nb, |i, j| 0.5 * (dot(&basis[i].0, &kb[j]) + dot(&basis[j].0, &kb[i])));
        let evd = a
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| PlateError::Numerical(format!("Rayleigh-Ritz eigensolver failed: {e:?}")))?;
        let theta = evd.S().column_vector();
        let y = evd.U();
        let keep = block.min(nb);
        let ritz: Vec<Vec<f64>> = (0..keep)
            .map(|c| {
                let mut v = vec![0.0; n];
                for (r, (b, _)) in basis.iter().enumerate() {
                    let w = y[(r, c)];
                    v.iter_mut().zip(b).for_each(|(s, t)| *s += w * t);
                }
                v
            })
            .collect();
        let converged = (0..opts.n_modes).all(|c| backward_error(k, m, nk, nm, theta[c], &ritz[c]) <= opts.tol);
        if converged {
            let res = (0..opts.n_modes).map(|c| relative_residual(k, m, theta[c], &ritz[c])).collect();
            let mut out = EigenPairs { values: Vec::new(), vectors: Vec::new(), residuals: res };
            for (c, mut v) in ritz.into_iter().take(opts.n_modes).enumerate() {
                fix_sign(&mut v);
                out.values.push(theta[c]);
                out.vectors.push(v);
            }
            return Ok(out);
        }
        x = ritz;
    }
    Err(PlateError::Numerical(format!("eigensolver did not converge in {} restarts", opts.max_iter)))
}

fn diag_entry(a: &SparseMat, j: usize) -> f64 {
    a.symbolic()
        .row_idx_of_col_raw(j)
        .iter()
        .zip(a.val_of_col(j))
        .find(|(&i, _)| i == j)
        .map(|(_, &v)| v)
        .unwrap_or(0.0)
}

/// Inertia of K - s M: number of generalized eigenvalues below `s` (dense check).
pub fn count_below(k: &SparseMat, m: &SparseMat, s: f64) -> Result<usize> {
    let a = add_scaled(k, m, -s)?.to_dense();
    let ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("{e:?}")))?;
    Ok(ev.iter().filter(|&&v| v < 0.0).count())
}
