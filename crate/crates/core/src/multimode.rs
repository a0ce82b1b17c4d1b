//! Error estimation for clusters of numerically multiple modes: the reduced maximin system,
//! its worst-case combination, multimode estimators and the cluster adaptation loop.

use crate::assembly::{Discretization, PlateModel, SparseMat};
use crate::discretization::Scheme;
use crate::eigen::{bilinear, dot, solve_eigen, spmv};
use crate::error::{PlateError, Result};
use crate::estimate::{
    adapt_single_mode, coarse_locals, estimate_step_single, mark_dorfler, refine_marked, solve_step, AdaptConfig,
    AdaptResult, ErrorEstimate, Prolongation, ProlongationMethod, StepSolution, TraceRow,
};
use crate::pht::HierTMesh;
use crate::tracking::{detect_multiplicity_fec, ModeSet, TrackingConfig};
use faer::{Mat, Side};

/// Inner-minimization operator and the symmetrized reduced stiffness of a cluster pair.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    /// n x m, alpha = A alpha~.
    pub a: Mat<f64>,
    /// m x m.
    pub kstar: Mat<f64>,
    /// Set when the coarse Gram matrix was rank deficient and a pseudo-inverse was used.
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaximinResult {
    pub alpha: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
    pub e_phi: f64,
    pub mu: f64,
    /// Prolonged coarse combination.
    pub phi: Vec<f64>,
    /// Fine combination.
    pub phi_tilde: Vec<f64>,
}

/// Gram-Schmidt (applied twice) in the M inner product.
pub fn m_orthonormalize(vectors: &[Vec<f64>], m: &SparseMat) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for v in vectors {
        let mut v = v.clone();
        let n0 = bilinear(m, &v, &v).max(0.0).sqrt();
        for _ in 0..2 {
            for (q, mq) in &out {
                let c = dot(&v, mq);
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let mv = spmv(m, &v);
        let n = dot(&v, &mv).max(0.0).sqrt();
        if !(n > 1e-10 * n0) {
            return Err(PlateError::Numerical("cluster basis is linearly dependent".into()));
        }
        out.push((v.iter().map(|x| x / n).collect(), mv.iter().map(|x| x / n).collect()));
    }
    Ok(out.into_iter().map(|(v, _)| v).collect())
}

fn gram(a: &[Vec<f64>], b: &[Vec<f64>], k: &SparseMat) -> Mat<f64> {
    let kb: Vec<Vec<f64>> = b.iter().map(|v| spmv(k, v)).collect();
    Mat::from_fn(a.len(), b.len(), |i, j| dot(&a[i], &kb[j]))
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix and whether it was singular.
fn spd_inverse(g: &Mat<f64>) -> Result<(Mat<f64>, bool)> {
    let n = g.nrows();
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("Gram eigensolve failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let smax = (0..n).map(|i| s[i].abs()).fold(0.0, f64::max);
    let cut = 1e-12 * smax;
    let singular = (0..n).any(|i| s[i] <= cut);
    let inv = Mat::from_fn(n, n, |i, j| {
        (0..n).filter(|&l| s[l] > cut).map(|l| u[(i, l)] * u[(j, l)] / s[l]).sum()
    });
    Ok((inv, singular))
}

/// Builds A and K* from the prolonged coarse basis and the fine basis in the fine energy product.
pub fn build_reduced_system(pphi: &[Vec<f64>], phit: &[Vec<f64>], k_fine: &SparseMat) -> Result<ReducedSystem> {
    if pphi.is_empty() || phit.is_empty() {
        return Err(PlateError::Argument("mode clusters must not be empty".into()));
    }
    let g = gram(pphi, pphi, k_fine);
    let c = gram(pphi, phit, k_fine);
    let f = gram(phit, phit, k_fine);
    let g = Mat::from_fn(g.nrows(), g.ncols(), |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
    let (ginv, singular) = spd_inverse(&g)?;
    let a = &ginv * &c;
    let ga = &g * &a;
    let raw = &f - a.transpose() * &c - c.transpose() * &a + a.transpose() * &ga;
    let m = raw.nrows();
    let kstar = Mat::from_fn(m, m, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]));
    let note = singular.then(|| "coarse Gram matrix is rank deficient; least-squares solution used".to_string());
    Ok(ReducedSystem { a, kstar, note })
}

/// Unit maximizer of x^T K* x. A degenerate top eigenspace resolves to the projection of the
/// first coordinate direction it does not annihilate.
pub fn maximize_quadratic(kstar: &Mat<f64>) -> Result<(Vec<f64>, f64)> {
    let m = kstar.nrows();
    if m == 0 {
        return Err(PlateError::Argument("reduced system has size zero".into()));
    }
    let evd = kstar
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("reduced eigensolve failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mu = s[m - 1];
    let scale = (0..m).map(|i| s[i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let top: Vec<usize> = (0..m).filter(|&l| mu - s[l] <= 1e-10 * scale).collect();
    for d in 0..m {
        let mut x: Vec<f64> = (0..m).map(|i| top.iter().map(|&l| u[(i, l)] * u[(d, l)]).sum()).collect();
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-8 {
            x.iter_mut().for_each(|v| *v /= n);
            if x[d] < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
            return Ok((x, mu));
        }
    }
    Err(PlateError::Numerical("no maximizer found for the reduced system".into()))
}

/// Worst unit fine combination and its best coarse approximation. The error is evaluated as
/// the energy of the residual at the maximizer, which equals sqrt(mu) without the cancellation
/// of the reduced form.
pub fn solve_maximin(rs: &ReducedSystem, pphi: &[Vec<f64>], phit: &[Vec<f64>], k_fine: &SparseMat) -> Result<MaximinResult> {
    let (alpha_tilde, mu) = maximize_quadratic(&rs.kstar)?;
    let n = rs.a.nrows();
    let alpha: Vec<f64> = (0..n).map(|i| (0..alpha_tilde.len()).map(|j| rs.a[(i, j)] * alpha_tilde[j]).sum()).collect();
    let combine = |basis: &[Vec<f64>], c: &[f64]| {
        let mut v = vec![0.0; basis[0].len()];
        for (b, &w) in basis.iter().zip(c) {
            v.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
        }
        v
    };
    let phi = combine(pphi, &alpha);
    let phi_tilde = combine(phit, &alpha_tilde);
    let r: Vec<f64> = phi_tilde.iter().zip(&phi).map(|(a, b)| a - b).collect();
    Ok(MaximinResult {
        e_phi: bilinear(k_fine, &r, &r).max(0.0).sqrt(),
        phi,
        phi_tilde,
        alpha,
        alpha_tilde,
        mu,
    })
}

/// Multimode estimate; frequencies are not squared.
pub fn estimate_multi(
    model: &PlateModel,
    coarse: &Discretization,
    fine: &Discretization,
    lambdas: &[f64],
    lambdas_fine: &[f64],
    mm: &MaximinResult,
) -> Result<ErrorEstimate> {
    if lambdas.is_empty() || lambdas_fine.is_empty() {
        return Err(PlateError::Argument("mode sets must not be empty".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fine2 = bilinear(&fine.system.k, &mm.phi_tilde, &mm.phi_tilde);
    if fine2 <= 0.0 {
        return Err(PlateError::Numerical("fine combination has zero energy".into()));
    }
    let e: Vec<f64> = mm.phi_tilde.iter().zip(&mm.phi).map(|(a, b)| a - b).collect();
    Ok(ErrorEstimate {
        lambda_fine: mean(lambdas_fine),
        e_lambda: (mean(lambdas) - mean(lambdas_fine)).abs(),
        delta_phi: mm.e_phi / fine2.sqrt(),
        error_energy: mm.e_phi,
        fine_energy: fine2.sqrt(),
        locals: coarse_locals(model, coarse, fine, &e)?,
    })
}

/// Multimode estimate of the tracked cluster of a solved step.
pub fn estimate_step_multi(
    model: &PlateModel,
    st: &StepSolution,
    method: ProlongationMethod,
) -> Result<(ErrorEstimate, MaximinResult, Option<String>)> {
    let (cs, fs) = (st.correspondence.coarse, st.correspondence.fine);
    let pro = Prolongation::new(model, &st.coarse, &st.fine, method)?;
    let cvec: Vec<Vec<f64>> = cs.indices().map(|i| st.coarse_pairs.vectors[i].clone()).collect();
    let cvec = m_orthonormalize(&cvec, &st.coarse.system.m)?;
    let pphi = cvec.iter().map(|v| pro.apply(v)).collect::<Result<Vec<_>>>()?;
    let fvec: Vec<Vec<f64>> = fs.indices().map(|j| st.fine_spectrum.pairs.vectors[j].clone()).collect();
    let fvec = m_orthonormalize(&fvec, &st.fine.system.m)?;
    let rs = build_reduced_system(&pphi, &fvec, &st.fine.system.k)?;
    let mm = solve_maximin(&rs, &pphi, &fvec, &st.fine.system.k)?;
    let lam: Vec<f64> = cs.indices().map(|i| st.coarse_pairs.values[i].max(0.0).sqrt()).collect();
    let lamf: Vec<f64> = fs.indices().map(|j| st.fine_spectrum.pairs.values[j].max(0.0).sqrt()).collect();
    let est = estimate_multi(model, &st.coarse, &st.fine, &lam, &lamf, &mm)?;
    Ok((est, mm, rs.note))
}

/// Estimate of the tracked set of a solved step: single-mode for one coarse mode, multimode otherwise.
pub fn estimate_tracked(model: &PlateModel, st: &StepSolution, method: ProlongationMethod) -> Result<(ErrorEstimate, Option<String>)> {
    let cs = st.correspondence.coarse;
    if cs.n == 1 {
        Ok((estimate_step_single(model, st, cs.start, method)?, None))
    } else {
        let (est, _, note) = estimate_step_multi(model, st, method)?;
        Ok((est, note))
    }
}

/// Cluster adaptation. A single-mode set delegates to the single-mode loop; a change of the
/// coarse multiplicity during the loop re-tracks the cluster and repeats the step.
pub fn adapt_multi(
    model: &PlateModel,
    scheme: Scheme,
    meshes: Vec<HierTMesh>,
    set: ModeSet,
    cfg: &AdaptConfig,
    tcfg: &TrackingConfig,
) -> Result<AdaptResult> {
    if set.n == 0 {
        return Err(PlateError::Argument("mode set must not be empty".into()));
    }
    if set.n == 1 {
        return adapt_single_mode(model, scheme, meshes, set.start, cfg, tcfg);
    }
    cfg.validate()?;
    tcfg.validate()?;
    let mut meshes = meshes;
    let mut set = set;
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    for step in 0..=cfg.max_steps {
        let mut st = solve_step(model, scheme, &meshes, set, cfg, tcfg)?;
        let cf = st.coarse_freqs();
        let detected = detect_multiplicity_fec(&cf, set.start, tcfg.threshold(cf[set.last()]))?;
        if detected != set && detected.last() < cf.len() - 1 {
            notes.push(format!(
                "step {step}: coarse multiplicity changed from {} to {}, re-tracking",
                set.n, detected.n
            ));
            set = detected;
            st = solve_step(model, scheme, &meshes, set, cfg, tcfg)?;
        }
        let cs = st.correspondence.coarse;
        let fs = st.correspondence.fine;
        let (est, note) = estimate_tracked(model, &st, cfg.prolongation)?;
        if let Some(n) = note {
            notes.push(format!("step {step}: {n}"));
        }
        let done = est.e_lambda <= cfg.tau_lambda && est.delta_phi <= cfg.tau_phi;
        let marking = if done || step == cfg.max_steps { None } else { Some(mark_dorfler(&est.locals, cfg.tau)?) };
        let mean = |v: &[f64]| v.iter().map(|x| x.max(0.0).sqrt()).sum::<f64>() / v.len() as f64;
        trace.push(TraceRow {
            step,
            dofs_coarse: st.coarse.dofs(),
            dofs_fine: st.fine.dofs(),
            n: cs.n,
            m: fs.n,
            lambda: mean(&st.coarse_pairs.values[cs.start..=cs.last()]),
            lambda_fine: mean(&st.fine_spectrum.pairs.values[fs.start..=fs.last()]),
            e_lambda: est.e_lambda,
            delta_phi: est.delta_phi,
            n_marked: marking.as_ref().map_or(0, |m| m.marked.len()),
        });
        if done {
            return Ok(AdaptResult { trace, converged: true, meshes, notes });
        }
        let Some(marking) = marking else { break };
        if let Some(w) = marking.warning {
            notes.push(format!("step {step}: {w}"));
            break;
        }
        notes.extend(refine_marked(model, &mut meshes, &marking.marked)?);
    }
    Ok(AdaptResult { trace, converged: false, meshes, notes })
}

/// Detects the set containing `mode` on the initial mesh, then adapts it.
pub fn adapt_mode(
    model: &PlateModel,
    scheme: Scheme,
    meshes: Vec<HierTMesh>,
    mode: usize,
    cfg: &AdaptConfig,
    tcfg: &TrackingConfig,
) -> Result<(ModeSet, AdaptResult)> {
    cfg.validate()?;
    tcfg.validate()?;
    let d = Discretization::new(model, scheme, meshes.clone(), cfg.quad_order)?;
    let want = (mode + 4).min(d.n_free());
    let f = solve_eigen(&d.system.k, &d.system.m, &cfg.eigen_options(want))?.frequencies();
    if mode >= f.len() {
        return Err(PlateError::Argument(format!("mode {mode} does not exist on the initial mesh")));
    }
    let set = detect_multiplicity_fec(&f, mode, tcfg.threshold(f[mode]))?;
    let r = adapt_multi(model, scheme, meshes, set, cfg, tcfg)?;
    Ok((set, r))
}
