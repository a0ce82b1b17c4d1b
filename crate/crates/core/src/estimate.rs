//! Hierarchical a-posteriori error estimation for single modes: estimator meshes, the two
//! prolongation operators, element-wise energy errors, Dorfler marking and the adaptive loop.

use crate::assembly::{assemble_cross_mass, conform_interfaces, element_energies, Discretization, PlateModel, SparseMat};
use crate::discretization::{Scheme, SolutionSpace};
use crate::eigen::{bilinear, dot, solve_band, solve_eigen, spmv, EigenOptions, EigenPairs, Spectrum};
use crate::error::{PlateError, Result};
use crate::pht::{prolong_hierarchical, HierTMesh};
use crate::tracking::{locate_fec, locate_mac, Correspondence, ModeSet, TrackMethod, TrackingConfig};
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProlongationMethod {
    #[default]
    Hierarchical,
    Projection,
}

/// Every leaf subdivided `l_e` times.
pub fn build_estimator_mesh(mesh: &HierTMesh, l_e: usize) -> HierTMesh {
    let mut fine = mesh.clone();
    for _ in 0..l_e {
        fine.refine_uniform();
    }
    fine
}

/// Estimator discretization on the meshes of `coarse` refined `l_e` times.
pub fn estimator_discretization(model: &PlateModel, coarse: &Discretization, l_e: usize) -> Result<Discretization> {
    if l_e == 0 {
        return Err(PlateError::Argument("estimator depth must be at least 1".into()));
    }
    let meshes = coarse.meshes.iter().map(|m| build_estimator_mesh(m, l_e)).collect();
    Discretization::new(model, coarse.scheme, meshes, coarse.order)
}

/// Exact map of coarse free-dof vectors into a nested fine discretization.
pub struct Prolongation<'a> {
    pub method: ProlongationMethod,
    coarse: &'a Discretization,
    fine: &'a Discretization,
    projection: Option<(SparseMat, faer::sparse::linalg::solvers::Llt<usize, f64>)>,
}

impl<'a> Prolongation<'a> {
    pub fn new(
        model: &PlateModel,
        coarse: &'a Discretization,
        fine: &'a Discretization,
        method: ProlongationMethod,
    ) -> Result<Self> {
        if coarse.meshes.len() != fine.meshes.len() || coarse.scheme != fine.scheme {
            return Err(PlateError::Argument("coarse and fine discretizations do not belong together".into()));
        }
        let projection = match method {
            ProlongationMethod::Hierarchical => {
                if coarse.spaces.iter().any(|s| s.pht().is_none()) {
                    return Err(PlateError::Unsupported(
                        "hierarchical prolongation is restricted to cubic PHT spaces".into(),
                    ));
                }
                None
            }
            ProlongationMethod::Projection => {
                let cross = assemble_cross_mass(model, fine, coarse)?;
                let llt = fine
                    .system
                    .m
                    .sp_cholesky(Side::Lower)
                    .map_err(|e| PlateError::Numerical(format!("fine mass matrix is singular: {e:?}")))?;
                Some((cross, llt))
            }
        };
        Ok(Prolongation { method, coarse, fine, projection })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.coarse.n_free() {
            return Err(PlateError::Argument(format!(
                "vector of length {} does not match the coarse system ({})",
                x.len(),
                self.coarse.n_free()
            )));
        }
        match &self.projection {
            Some((cross, llt)) => {
                let rhs = spmv(cross, x);
                let mut r = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                llt.solve_in_place(r.as_mut());
                Ok((0..rhs.len()).map(|i| r[(i, 0)]).collect())
            }
            None => {
                let cd = &self.coarse.system.dofmap;
                let fd = &self.fine.system.dofmap;
                let full = cd.expand(x);
                let mut out = vec![0.0; fd.n_dofs()];
                for p in 0..self.coarse.spaces.len() {
                    for f in 0..3 {
                        let local = cd.patch_field(&full, p, f);
                        let fine = prolong_space(&self.coarse.spaces[p], &self.fine.spaces[p], &local)?;
                        for (l, v) in fine.into_iter().enumerate() {
                            out[3 * fd.global_basis[p][l] + f] = v;
                        }
                    }
                }
                Ok(fd.restrict(&out))
            }
        }
    }
}

/// Hierarchical prolongation of one scalar field between nested spaces of one patch.
pub fn prolong_space(coarse: &SolutionSpace, fine: &SolutionSpace, coeffs: &[f64]) -> Result<Vec<f64>> {
    match (coarse, fine) {
        (SolutionSpace::Pht(c), SolutionSpace::Pht(f)) => prolong_hierarchical(c, f, coeffs),
        (SolutionSpace::Rational { inner: ci, weights: cw }, SolutionSpace::Rational { inner: fi, weights: fw }) => {
            let hom: Vec<f64> = coeffs.iter().zip(cw).map(|(c, w)| c * w).collect();
            let fine_hom = prolong_space(ci, fi, &hom)?;
            Ok(fine_hom.iter().zip(fw).map(|(c, w)| c / w).collect())
        }
        _ => Err(PlateError::Unsupported("hierarchical prolongation is restricted to cubic PHT spaces".into())),
    }
}

/// Squared energy error of one coarse leaf.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalError {
    pub patch: usize,
    pub cell: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    /// Estimator-mesh frequency the coarse one is compared with.
    pub lambda_fine: f64,
    pub e_lambda: f64,
    pub delta_phi: f64,
    /// Energy norm of the error field.
    pub error_energy: f64,
    /// Energy norm of the fine mode.
    pub fine_energy: f64,
    pub locals: Vec<LocalError>,
}

/// Element energies of a fine free-dof field, summed onto the coarse leaves containing them.
pub fn coarse_locals(model: &PlateModel, coarse: &Discretization, fine: &Discretization, e: &[f64]) -> Result<Vec<LocalError>> {
    let full = fine.system.dofmap.expand(e);
    let energies = element_energies(model, &fine.spaces, &fine.system.dofmap, &full, fine.order)?;
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (p, s) in coarse.spaces.iter().enumerate() {
        for el in 0..s.num_elements() {
            acc.insert((p, s.element_id(el)), 0.0);
        }
    }
    for (p, el, v) in energies {
        let r = fine.spaces[p].element_rect(el);
        let ce = coarse.spaces[p].locate(0.5 * (r[0] + r[1]), 0.5 * (r[2] + r[3]));
        *acc.get_mut(&(p, coarse.spaces[p].element_id(ce))).expect("nested meshes") += v.max(0.0);
    }
    Ok(acc.into_iter().map(|((patch, cell), value)| LocalError { patch, cell, value }).collect())
}

/// Flips `fine` when (P phi)^T M~ phi~ < 0.
pub fn align_sign(prolonged: &[f64], fine: &mut [f64], m_fine: &SparseMat) {
    if bilinear(m_fine, prolonged, fine) < 0.0 {
        fine.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Single-mode estimate from coarse (lambda, phi) and fine (lambda~, phi~), frequencies not squared.
pub fn estimate_single(
    model: &PlateModel,
    coarse: &Discretization,
    fine: &Discretization,
    lambda: f64,
    phi: &[f64],
    lambda_fine: f64,
    phi_fine: &[f64],
    prolongation: &Prolongation,
) -> Result<ErrorEstimate> {
    if phi.len() != coarse.n_free() || phi_fine.len() != fine.n_free() {
        return Err(PlateError::Argument("mode vectors do not match their discretizations".into()));
    }
    if !(lambda > 0.0 && lambda_fine > 0.0) {
        return Err(PlateError::Argument("frequencies must be positive for the logarithmic estimator".into()));
    }
    let pphi = prolongation.apply(phi)?;
    let mut pf = phi_fine.to_vec();
    align_sign(&pphi, &mut pf, &fine.system.m);
    let e: Vec<f64> = pf.iter().zip(&pphi).map(|(a, b)| a - b).collect();
    let err2 = bilinear(&fine.system.k, &e, &e).max(0.0);
    let fine2 = bilinear(&fine.system.k, &pf, &pf);
    if fine2 <= 0.0 {
        return Err(PlateError::Numerical("fine mode has zero energy".into()));
    }
    let locals = coarse_locals(model, coarse, fine, &e)?;
    Ok(ErrorEstimate {
        lambda_fine,
        e_lambda: (lambda_fine.ln() - lambda.ln()).abs(),
        delta_phi: err2.sqrt() / fine2.sqrt(),
        error_energy: err2.sqrt(),
        fine_energy: fine2.sqrt(),
        locals,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marking {
    pub marked: Vec<(usize, usize)>,
    pub warning: Option<String>,
}

/// Smallest prefix of the descending-sorted leaves holding a `tau` fraction of the total.
/// Ties are broken by (patch, cell).
pub fn mark_dorfler(locals: &[LocalError], tau: f64) -> Result<Marking> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(PlateError::Argument(format!("marking fraction must lie in (0,1], got {tau}")));
    }
    if let Some(l) = locals.iter().find(|l| !(l.value >= 0.0)) {
        return Err(PlateError::Argument(format!("negative local error on patch {} cell {}", l.patch, l.cell)));
    }
    let total: f64 = locals.iter().map(|l| l.value).sum();
    if total == 0.0 {
        return Ok(Marking { marked: Vec::new(), warning: Some("all local errors are zero".into()) });
    }
    let mut order: Vec<&LocalError> = locals.iter().filter(|l| l.value > 0.0).collect();
    order.sort_by(|a, b| b.value.total_cmp(&a.value).then((a.patch, a.cell).cmp(&(b.patch, b.cell))));
    let goal = tau * total * (1.0 - 1e-12);
    let mut sum = 0.0;
    let mut marked = Vec::new();
    for l in order {
        if sum >= goal {
            break;
        }
        sum += l.value;
        marked.push((l.patch, l.cell));
    }
    Ok(Marking { marked, warning: None })
}

/// Refines marked (patch, cell) leaves and restores interface conformity.
pub fn refine_marked(model: &PlateModel, meshes: &mut [HierTMesh], marked: &[(usize, usize)]) -> Result<Vec<String>> {
    let mut by_patch: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(p, c) in marked {
        by_patch.entry(p).or_default().push(c);
    }
    for (p, cells) in by_patch {
        meshes[p].refine(&cells)?;
    }
    conform_interfaces(meshes, &model.interfaces)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub tau: f64,
    pub tau_lambda: f64,
    pub tau_phi: f64,
    pub l_e: usize,
    pub max_steps: usize,
    pub prolongation: ProlongationMethod,
    pub tracking: TrackMethod,
    pub quad_order: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            tau: 0.3,
            tau_lambda: 1e-4,
            tau_phi: 1e-2,
            l_e: 1,
            max_steps: 30,
            prolongation: ProlongationMethod::Hierarchical,
            tracking: TrackMethod::Fec,
            quad_order: 4,
            seed: 0x5eed,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errs.push(format!("tau must lie in (0,1], got {}", self.tau));
        }
        if !(self.tau_lambda > 0.0) || !(self.tau_phi > 0.0) {
            errs.push("tolerances must be positive".to_string());
        }
        if self.l_e < 1 {
            errs.push("l_e must be at least 1".to_string());
        }
        if self.quad_order < 1 {
            errs.push("quadrature order must be at least 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PlateError::Argument(errs.join("; ")))
        }
    }

    pub fn eigen_options(&self, n_modes: usize) -> EigenOptions {
        EigenOptions { n_modes, seed: self.seed, ..Default::default() }
    }
}

/// One row of an adaptation trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub dofs_coarse: usize,
    pub dofs_fine: usize,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub lambda_fine: f64,
    pub e_lambda: f64,
    pub delta_phi: f64,
    pub n_marked: usize,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "step,dofs_coarse,dofs_fine,n,m,lambda,lambda_fine,e_lambda,delta_phi,n_marked";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.12e},{:.12e},{:.6e},{:.6e},{}",
            self.step,
            self.dofs_coarse,
            self.dofs_fine,
            self.n,
            self.m,
            self.lambda,
            self.lambda_fine,
            self.e_lambda,
            self.delta_phi,
            self.n_marked
        )
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(TraceRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub meshes: Vec<HierTMesh>,
    pub notes: Vec<String>,
}

/// Coarse and estimator solutions of one adaptation step with the tracked correspondence.
pub struct StepSolution {
    pub coarse: Discretization,
    pub fine: Discretization,
    pub coarse_pairs: EigenPairs,
    pub fine_spectrum: Spectrum,
    pub correspondence: Correspondence,
}

impl StepSolution {
    pub fn coarse_freqs(&self) -> Vec<f64> {
        self.coarse_pairs.frequencies()
    }

    pub fn fine_freqs(&self) -> Vec<f64> {
        self.fine_spectrum.frequencies()
    }
}

/// Solves coarse and estimator problems covering coarse set `set` (and its search window),
/// without tracking.
pub fn solve_spectra(
    model: &PlateModel,
    scheme: Scheme,
    meshes: &[HierTMesh],
    set: ModeSet,
    cfg: &AdaptConfig,
    tcfg: &TrackingConfig,
) -> Result<StepSolution> {
    let coarse = Discretization::new(model, scheme, meshes.to_vec(), cfg.quad_order)?;
    let fine = estimator_discretization(model, &coarse, cfg.l_e)?;
    let want = (set.last() + 3).min(coarse.n_free());
    let coarse_pairs = solve_eigen(&coarse.system.k, &coarse.system.m, &cfg.eigen_options(want))?;
    if set.last() >= coarse_pairs.len() {
        return Err(PlateError::Argument(format!("mode {} does not exist on the coarse mesh", set.last())));
    }
    let cf = coarse_pairs.frequencies();
    let (lo, hi) = (cf[set.start], cf[set.last()]);
    let (l, h) = tcfg.search_range(lo, hi);
    let l = l.max(0.0);
    let fine_spectrum = solve_band(&fine.system.k, &fine.system.m, l, h.max(l + f64::EPSILON), 0.0, &cfg.eigen_options(want))?;
    Ok(StepSolution { coarse, fine, coarse_pairs, fine_spectrum, correspondence: Correspondence::identity(set, cfg.tracking) })
}

/// Solves coarse and estimator problems and tracks the coarse set into the fine spectrum.
pub fn solve_step(
    model: &PlateModel,
    scheme: Scheme,
    meshes: &[HierTMesh],
    set: ModeSet,
    cfg: &AdaptConfig,
    tcfg: &TrackingConfig,
) -> Result<StepSolution> {
    let mut st = solve_spectra(model, scheme, meshes, set, cfg, tcfg)?;
    st.correspondence = track_set(model, &st, set, cfg.tracking, tcfg)?;
    Ok(st)
}

/// Locates coarse set `set` of a solved step in its estimator spectrum.
pub fn track_set(
    model: &PlateModel,
    st: &StepSolution,
    set: ModeSet,
    method: TrackMethod,
    tcfg: &TrackingConfig,
) -> Result<Correspondence> {
    let cf = st.coarse_freqs();
    let ff = st.fine_freqs();
    if set.n == 0 || set.last() >= cf.len() {
        return Err(PlateError::Argument(format!("mode set {set:?} is outside the solved coarse spectrum")));
    }
    match method {
        TrackMethod::Fec => locate_fec(set, &cf, &ff, tcfg),
        TrackMethod::Mac => {
            let pro = Prolongation::new(model, &st.coarse, &st.fine, ProlongationMethod::Projection)?;
            let pv = set.indices().map(|i| pro.apply(&st.coarse_pairs.vectors[i])).collect::<Result<Vec<_>>>()?;
            locate_mac(set, &cf, &pv, &ff, &st.fine_spectrum.pairs.vectors, &st.fine.system.m, tcfg)
        }
    }
}

/// M~-projection of `target` onto the span of `basis`, normalized to unit M~-norm.
pub fn project_onto_span(target: &[f64], basis: &[Vec<f64>], m: &SparseMat) -> Result<Vec<f64>> {
    let k = basis.len();
    let mb: Vec<Vec<f64>> = basis.iter().map(|b| spmv(m, b)).collect();
    let g = Mat::from_fn(k, k, |i, j| dot(&basis[i], &mb[j]));
    let mut r = Mat::from_fn(k, 1, |i, _| dot(target, &mb[i]));
    let llt = g
        .llt(Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("cluster Gram matrix is singular: {e:?}")))?;
    llt.solve_in_place(r.as_mut());
    let mut v = vec![0.0; target.len()];
    for (i, b) in basis.iter().enumerate() {
        v.iter_mut().zip(b).for_each(|(x, y)| *x += r[(i, 0)] * y);
    }
    let n = bilinear(m, &v, &v).max(0.0).sqrt();
    if n == 0.0 {
        return Err(PlateError::Numerical("projection onto the fine cluster vanishes".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Single-mode estimate for coarse mode `i` on a solved step. A fine cluster is replaced by
/// the projection of the prolonged coarse mode onto its span, with its Rayleigh quotient.
pub fn estimate_step_single(model: &PlateModel, st: &StepSolution, i: usize, method: ProlongationMethod) -> Result<ErrorEstimate> {
    let pro = Prolongation::new(model, &st.coarse, &st.fine, method)?;
    let lambda = st.coarse_pairs.values[i].max(0.0).sqrt();
    let phi = &st.coarse_pairs.vectors[i];
    let fs = st.correspondence.fine;
    let (lf, pf) = if fs.n == 1 {
        (st.fine_spectrum.pairs.values[fs.start].max(0.0).sqrt(), st.fine_spectrum.pairs.vectors[fs.start].clone())
    } else {
        let basis: Vec<Vec<f64>> = fs.indices().map(|j| st.fine_spectrum.pairs.vectors[j].clone()).collect();
        let v = project_onto_span(&pro.apply(phi)?, &basis, &st.fine.system.m)?;
        let rq = bilinear(&st.fine.system.k, &v, &v) / bilinear(&st.fine.system.m, &v, &v);
        (rq.max(0.0).sqrt(), v)
    };
    estimate_single(model, &st.coarse, &st.fine, lambda, phi, lf, &pf, &pro)
}

/// Adaptive refinement for coarse mode `mode` until both tolerances hold or `max_steps` refinements.
pub fn adapt_single_mode(
    model: &PlateModel,
    scheme: Scheme,
    meshes: Vec<HierTMesh>,
    mode: usize,
    cfg: &AdaptConfig,
    tcfg: &TrackingConfig,
) -> Result<AdaptResult> {
    cfg.validate()?;
    tcfg.validate()?;
    let mut meshes = meshes;
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    for step in 0..=cfg.max_steps {
        let st = solve_step(model, scheme, &meshes, ModeSet::single(mode), cfg, tcfg)?;
        let est = estimate_step_single(model, &st, mode, cfg.prolongation)?;
        let done = est.e_lambda <= cfg.tau_lambda && est.delta_phi <= cfg.tau_phi;
        let marking = if done || step == cfg.max_steps { None } else { Some(mark_dorfler(&est.locals, cfg.tau)?) };
        let fs = st.correspondence.fine;
        trace.push(TraceRow {
            step,
            dofs_coarse: st.coarse.dofs(),
            dofs_fine: st.fine.dofs(),
            n: 1,
            m: fs.n,
            lambda: st.coarse_pairs.values[mode].max(0.0).sqrt(),
            lambda_fine: est.lambda_fine,
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
