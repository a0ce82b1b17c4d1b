//! Adaptivity over a frequency band: the low-to-high mode sweep, the worst-first variant and a
//! verification pass over the final mesh.

use crate::assembly::{Discretization, PlateModel};
use crate::discretization::Scheme;
use crate::eigen::{solve_band, EigenPairs};
use crate::error::{PlateError, Result};
use crate::estimate::{mark_dorfler, refine_marked, solve_spectra, track_set, AdaptConfig, ErrorEstimate, TraceRow};
use crate::multimode::{adapt_multi, estimate_tracked};
use crate::pht::HierTMesh;
use crate::tracking::{detect_multiplicity_fec, ModeSet, TrackMethod, TrackingConfig};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    SweepLowToHigh,
    WorstFirst,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::SweepLowToHigh => "sweep_low_to_high",
            Strategy::WorstFirst => "worst_first",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub band: [f64; 2],
    pub strategy: Strategy,
    pub adapt: AdaptConfig,
    pub tracking: TrackingConfig,
    /// Upper bound on phases (sweep) or refinement steps (worst-first).
    pub max_phases: usize,
}

impl SweepConfig {
    pub fn new(band: [f64; 2]) -> Self {
        SweepConfig {
            band,
            strategy: Strategy::SweepLowToHigh,
            adapt: AdaptConfig::default(),
            tracking: TrackingConfig::default(),
            max_phases: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.band;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(PlateError::Argument(format!("band [{lo}, {hi}] must satisfy 0 <= min < max")));
        }
        if self.max_phases == 0 {
            return Err(PlateError::Argument("max_phases must be positive".into()));
        }
        self.adapt.validate()?;
        self.tracking.validate()
    }

    pub fn margin(&self) -> f64 {
        self.tracking.margin_for(self.band[0], self.band[1])
    }

    /// Tracking settings whose search windows cover the widened band.
    pub fn band_tracking(&self) -> TrackingConfig {
        TrackingConfig { band: Some(self.band), ..self.tracking.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub set: ModeSet,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub start: usize,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub e_lambda: f64,
    pub delta_phi: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub strategy: Strategy,
    pub tracking: TrackMethod,
    pub scheme: Scheme,
    pub band: [f64; 2],
    pub margin: f64,
    pub phases: Vec<Phase>,
    /// Total dofs after each phase, starting with the initial mesh.
    pub dof_history: Vec<usize>,
    pub refinements: usize,
    pub final_dofs: usize,
    /// In-band frequencies of the final coarse mesh.
    pub final_spectrum: Vec<f64>,
    pub verification: Vec<VerifyRow>,
    pub converged: bool,
    pub aborted: Option<String>,
    pub wall_seconds: f64,
    #[serde(skip)]
    pub meshes: Vec<HierTMesh>,
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| PlateError::Internal(e.to_string()))
    }
}

/// Coarse discretization and all its modes up to the widened band top.
fn band_spectrum(model: &PlateModel, scheme: Scheme, meshes: &[HierTMesh], cfg: &SweepConfig) -> Result<(Discretization, EigenPairs)> {
    let d = Discretization::new(model, scheme, meshes.to_vec(), cfg.adapt.quad_order)?;
    let sp = solve_band(&d.system.k, &d.system.m, cfg.band[0], cfg.band[1], cfg.margin(), &cfg.adapt.eigen_options(1))?;
    Ok((d, sp.pairs))
}

/// In-band mode indices partitioned into multiplicity sets, lowest first.
pub fn partition_band(freqs: &[f64], band: [f64; 2], tcfg: &TrackingConfig) -> Result<Vec<ModeSet>> {
    let mut sets = Vec::new();
    let Some(mut i) = freqs.iter().position(|&f| f >= band[0]) else { return Ok(sets) };
    while i < freqs.len() && freqs[i] <= band[1] {
        let set = clamp_from(detect_multiplicity_fec(freqs, i, tcfg.threshold(freqs[i]))?, i);
        i += set.n;
        sets.push(set);
    }
    Ok(sets)
}

fn clamp_from(set: ModeSet, i: usize) -> ModeSet {
    ModeSet { start: i, n: set.last() + 1 - i }
}

/// One in-band mode set with its estimate.
#[derive(Clone, Debug)]
pub struct BandEntry {
    pub set: ModeSet,
    pub row: TraceRow,
    pub estimate: ErrorEstimate,
}

/// Mode sets of the band with their estimates on the given mesh.
pub fn evaluate_band(model: &PlateModel, scheme: Scheme, meshes: &[HierTMesh], cfg: &SweepConfig) -> Result<Vec<BandEntry>> {
    let (_, pairs) = band_spectrum(model, scheme, meshes, cfg)?;
    let sets = partition_band(&pairs.frequencies(), cfg.band, &cfg.tracking)?;
    let (Some(first), Some(last)) = (sets.first(), sets.last()) else { return Ok(Vec::new()) };
    let span = ModeSet { start: first.start, n: last.last() + 1 - first.start };
    let tcfg = cfg.band_tracking();
    let mut st = solve_spectra(model, scheme, meshes, span, &cfg.adapt, &tcfg)?;
    let mut out = Vec::new();
    for set in sets {
        st.correspondence = track_set(model, &st, set, cfg.adapt.tracking, &tcfg)?;
        let (est, _) = estimate_tracked(model, &st, cfg.adapt.prolongation)?;
        let fs = st.correspondence.fine;
        let mean = |v: &[f64]| v.iter().map(|x| x.max(0.0).sqrt()).sum::<f64>() / v.len() as f64;
        out.push(BandEntry {
            set,
            row: TraceRow {
                step: 0,
                dofs_coarse: st.coarse.dofs(),
                dofs_fine: st.fine.dofs(),
                n: set.n,
                m: fs.n,
                lambda: mean(&st.coarse_pairs.values[set.indices()]),
                lambda_fine: mean(&st.fine_spectrum.pairs.values[fs.indices()]),
                e_lambda: est.e_lambda,
                delta_phi: est.delta_phi,
                n_marked: 0,
            },
            estimate: est,
        });
    }
    Ok(out)
}

/// Re-solves, re-tracks and re-estimates every in-band set once.
pub fn verify_band(model: &PlateModel, scheme: Scheme, meshes: &[HierTMesh], cfg: &SweepConfig) -> Result<Vec<VerifyRow>> {
    Ok(evaluate_band(model, scheme, meshes, cfg)?
        .into_iter()
        .map(|BandEntry { set, row: r, .. }| VerifyRow {
            start: set.start,
            n: r.n,
            m: r.m,
            lambda: r.lambda,
            e_lambda: r.e_lambda,
            delta_phi: r.delta_phi,
            pass: r.e_lambda <= cfg.adapt.tau_lambda && r.delta_phi <= cfg.adapt.tau_phi,
        })
        .collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn pick_worst(deltas: &[f64]) -> Option<usize> {
    deltas.iter().enumerate().fold(None, |best: Option<(usize, f64)>, (i, &d)| match best {
        Some((_, b)) if b >= d => best,
        _ => Some((i, d)),
    })
    .map(|(i, _)| i)
}

fn dofs_of(model: &PlateModel, scheme: Scheme, meshes: &[HierTMesh], order: usize) -> Result<usize> {
    Ok(Discretization::new(model, scheme, meshes.to_vec(), order)?.dofs())
}

pub fn run(model: &PlateModel, scheme: Scheme, meshes: Vec<HierTMesh>, cfg: &SweepConfig) -> Result<SweepReport> {
    match cfg.strategy {
        Strategy::SweepLowToHigh => sweep(model, scheme, meshes, cfg),
        Strategy::WorstFirst => worst_first(model, scheme, meshes, cfg),
    }
}

fn report(scheme: Scheme, cfg: &SweepConfig, strategy: Strategy, meshes: Vec<HierTMesh>) -> SweepReport {
    SweepReport {
        strategy,
        tracking: cfg.adapt.tracking,
        scheme,
        band: cfg.band,
        margin: cfg.margin(),
        phases: Vec::new(),
        dof_history: Vec::new(),
        refinements: 0,
        final_dofs: 0,
        final_spectrum: Vec::new(),
        verification: Vec::new(),
        converged: false,
        aborted: None,
        wall_seconds: 0.0,
        meshes,
    }
}

fn finish(model: &PlateModel, scheme: Scheme, cfg: &SweepConfig, rep: &mut SweepReport, t0: Instant) -> Result<()> {
    let (d, pairs) = band_spectrum(model, scheme, &rep.meshes, cfg)?;
    rep.final_dofs = d.dofs();
    rep.final_spectrum = pairs.frequencies().into_iter().filter(|&f| f >= cfg.band[0] && f <= cfg.band[1]).collect();
    if rep.aborted.is_none() {
        rep.verification = verify_band(model, scheme, &rep.meshes, cfg)?;
        rep.converged = rep.verification.iter().all(|v| v.pass);
    }
    rep.wall_seconds = t0.elapsed().as_secs_f64();
    Ok(())
}

/// Low-to-high sweep: each multiplicity set is adapted in turn on the mesh left by the previous
/// phase, advancing by the set size. Band membership is re-read from the current spectrum.
pub fn sweep(model: &PlateModel, scheme: Scheme, meshes: Vec<HierTMesh>, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let mut rep = report(scheme, cfg, Strategy::SweepLowToHigh, meshes);
    rep.dof_history.push(dofs_of(model, scheme, &rep.meshes, cfg.adapt.quad_order)?);
    let (_, pairs) = band_spectrum(model, scheme, &rep.meshes, cfg)?;
    let freqs = pairs.frequencies();
    let mut i = freqs
        .iter()
        .position(|&f| f >= cfg.band[0] && f <= cfg.band[1])
        .ok_or_else(|| PlateError::Argument(format!("no mode of the initial mesh lies in [{}, {}]", cfg.band[0], cfg.band[1])))?;
    for _ in 0..cfg.max_phases {
        let (_, pairs) = band_spectrum(model, scheme, &rep.meshes, cfg)?;
        let freqs = pairs.frequencies();
        if i >= freqs.len() || freqs[i] > cfg.band[1] {
            break;
        }
        let set = clamp_from(detect_multiplicity_fec(&freqs, i, cfg.tracking.threshold(freqs[i]))?, i);
        let result = match adapt_multi(model, scheme, rep.meshes.clone(), set, &cfg.adapt, &cfg.band_tracking()) {
            Ok(r) => r,
            Err(e) => {
                rep.aborted = Some(format!("phase at mode {i}: {e}"));
                break;
            }
        };
        let n_done = result.trace.last().map_or(set.n, |r| r.n);
        rep.refinements += result.trace.iter().filter(|r| r.n_marked > 0).count();
        rep.meshes = result.meshes;
        rep.dof_history.push(dofs_of(model, scheme, &rep.meshes, cfg.adapt.quad_order)?);
        rep.phases.push(Phase { set, trace: result.trace, converged: result.converged, notes: result.notes });
        i = set.start + n_done.max(1);
    }
    finish(model, scheme, cfg, &mut rep, t0)?;
    Ok(rep)
}

/// Worst-first: every step refines for the in-band set with the largest delta_phi, until all
/// sets meet both tolerances.
pub fn worst_first(model: &PlateModel, scheme: Scheme, meshes: Vec<HierTMesh>, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let mut rep = report(scheme, cfg, Strategy::WorstFirst, meshes);
    rep.dof_history.push(dofs_of(model, scheme, &rep.meshes, cfg.adapt.quad_order)?);
    for step in 0..cfg.max_phases {
        let rows = match evaluate_band(model, scheme, &rep.meshes, cfg) {
            Ok(r) => r,
            Err(e) => {
                rep.aborted = Some(format!("step {step}: {e}"));
                break;
            }
        };
        if rows.is_empty() {
            if step == 0 {
                return Err(PlateError::Argument(format!("no mode of the initial mesh lies in [{}, {}]", cfg.band[0], cfg.band[1])));
            }
            break;
        }
        let failing: Vec<f64> = rows
            .iter()
            .map(|BandEntry { row: r, .. }| if r.e_lambda <= cfg.adapt.tau_lambda && r.delta_phi <= cfg.adapt.tau_phi { -1.0 } else { r.delta_phi })
            .collect();
        if failing.iter().all(|&d| d < 0.0) {
            break;
        }
        let w = pick_worst(&failing).expect("non-empty");
        let BandEntry { set, mut row, estimate } = rows[w].clone();
        let marking = mark_dorfler(&estimate.locals, cfg.adapt.tau)?;
        row.step = step;
        row.n_marked = marking.marked.len();
        let mut notes = Vec::new();
        if let Some(wn) = marking.warning {
            notes.push(wn);
            rep.phases.push(Phase { set, trace: vec![row], converged: false, notes });
            break;
        }
        notes.extend(refine_marked(model, &mut rep.meshes, &marking.marked)?);
        rep.refinements += 1;
        rep.dof_history.push(dofs_of(model, scheme, &rep.meshes, cfg.adapt.quad_order)?);
        rep.phases.push(Phase { set, trace: vec![row], converged: false, notes });
    }
    finish(model, scheme, cfg, &mut rep, t0)?;
    Ok(rep)
}

/// MAC values between the coarse modes of the widened band (prolonged into the estimator space)
/// and the estimator modes of the widened band. Returns row indices, column indices and values.
pub fn band_mac(
    model: &PlateModel,
    scheme: Scheme,
    meshes: &[HierTMesh],
    cfg: &SweepConfig,
) -> Result<(Vec<usize>, Vec<usize>, Vec<Vec<f64>>)> {
    let (_, pairs) = band_spectrum(model, scheme, meshes, cfg)?;
    let freqs = pairs.frequencies();
    let a = cfg.margin();
    let rows = crate::tracking::window(&freqs, cfg.band[0], cfg.band[1], a);
    let (Some(&first), Some(&last)) = (rows.first(), rows.last()) else {
        return Err(PlateError::Argument(format!("no mode lies in [{}, {}]", cfg.band[0], cfg.band[1])));
    };
    let st = solve_spectra(model, scheme, meshes, ModeSet { start: first, n: last + 1 - first }, &cfg.adapt, &cfg.band_tracking())?;
    let cols = crate::tracking::window(&st.fine_freqs(), cfg.band[0], cfg.band[1], a);
    let method = if st.coarse.spaces.iter().all(|s| s.pht().is_some()) {
        crate::estimate::ProlongationMethod::Hierarchical
    } else {
        crate::estimate::ProlongationMethod::Projection
    };
    let pro = crate::estimate::Prolongation::new(model, &st.coarse, &st.fine, method)?;
    let pc = rows.iter().map(|&i| pro.apply(&st.coarse_pairs.vectors[i])).collect::<Result<Vec<_>>>()?;
    let fv: Vec<Vec<f64>> = cols.iter().map(|&j| st.fine_spectrum.pairs.vectors[j].clone()).collect();
    let mac = crate::tracking::mac_matrix(&pc, &fv, &st.fine.system.m)?;
    Ok((rows, cols, mac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{BoundaryCondition, MaterialParams};
    use crate::estimate::adapt_single_mode;
    use crate::spline::rectangle_patches;

    fn square() -> PlateModel {
        PlateModel::from_geometries(
            rectangle_patches(1.0, 1.0, 1, 1),
            vec![MaterialParams::new(1.0, 0.3, 1.0, 0.05)],
            BoundaryCondition::SimplySupported,
        )
    }

    fn mesh(levels: usize) -> Vec<HierTMesh> {
        let mut m = HierTMesh::new(1, 1).unwrap();
        for _ in 0..levels {
            m.refine_uniform();
        }
        vec![m]
    }

    fn config(band: [f64; 2]) -> SweepConfig {
        let mut c = SweepConfig::new(band);
        c.adapt.tau_lambda = 2e-3;
        c.adapt.tau_phi = 5e-2;
        c.adapt.max_steps = 10;
        c
    }

    #[test]
    fn worst_pick_is_argmax() {
        assert_eq!(pick_worst(&[0.05, 0.2]), Some(1));
        assert_eq!(pick_worst(&[0.3, 0.3, 0.1]), Some(0));
        assert_eq!(pick_worst(&[]), None);
    }

    #[test]
    fn partition_groups_multiplicities() {
        let f = [0.1, 0.29, 0.788, 0.7885, 1.22, 1.66];
        let sets = partition_band(&f, [0.2, 1.3], &TrackingConfig::default()).unwrap();
        assert_eq!(sets, vec![ModeSet::single(1), ModeSet { start: 2, n: 2 }, ModeSet::single(4)]);
        assert!(partition_band(&f, [2.0, 3.0], &TrackingConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn band_validation() {
        assert!(SweepConfig::new([1.0, 0.5]).validate().is_err());
        assert!(SweepConfig::new([-1.0, 0.5]).validate().is_err());
        assert!(sweep(&square(), Scheme::Gift, mesh(1), &config([5.0, 6.0])).is_err());
    }

    #[test]
    fn single_mode_band_equals_single_adaptation() {
        let cfg = config([0.2, 0.5]);
        let rep = sweep(&square(), Scheme::Gift, mesh(1), &cfg).unwrap();
        let single = adapt_single_mode(&square(), Scheme::Gift, mesh(1), 0, &cfg.adapt, &cfg.tracking).unwrap();
        assert_eq!(rep.phases.len(), 1);
        assert_eq!(rep.phases[0].trace, single.trace);
    }

    #[test]
    fn sweep_processes_single_double_single_in_order() {
        let cfg = config([0.2, 1.3]);
        let rep = sweep(&square(), Scheme::Gift, mesh(1), &cfg).unwrap();
        let sets: Vec<ModeSet> = rep.phases.iter().map(|p| p.set).collect();
        assert_eq!(sets, vec![ModeSet::single(0), ModeSet { start: 1, n: 2 }, ModeSet::single(3)]);
        assert!(rep.dof_history.windows(2).all(|w| w[1] >= w[0]));
        assert!(rep.converged, "{:?}", rep.verification);
        assert_eq!(rep.verification.len(), 3);
        assert_eq!(rep.final_spectrum.len(), 4);
        let again = sweep(&square(), Scheme::Gift, rep.meshes.clone(), &cfg).unwrap();
        assert_eq!(again.refinements, 0);
        let coarse = verify_band(&square(), Scheme::Gift, &mesh(1), &cfg).unwrap();
        assert!(coarse.iter().any(|v| !v.pass));
        let (rows, cols, mac) = band_mac(&square(), Scheme::Gift, &mesh(2), &cfg).unwrap();
        assert_eq!(rows, vec![0, 1, 2, 3]);
        assert_eq!(cols, rows);
        let block: f64 = (1..3).flat_map(|i| (1..3).map(move |j| (i, j))).map(|(i, j)| mac[i][j]).sum();
        assert!((block - 2.0).abs() < 1e-3);
        assert!(mac[0][0] > 0.999 && mac[3][3] > 0.999);
        let json = rep.to_json().unwrap();
        assert!(json.contains("\"strategy\": \"sweep_low_to_high\"") && json.contains("\"tracking\": \"fec\""));
    }

    #[test]
    fn worst_first_meets_all_tolerances() {
        let mut cfg = config([0.2, 1.3]);
        cfg.strategy = Strategy::WorstFirst;
        let rep = run(&square(), Scheme::Gift, mesh(1), &cfg).unwrap();
        assert!(rep.converged, "{:?}", rep.verification);
        assert!(rep.verification.iter().all(|v| v.pass));
        let first = &rep.phases[0].trace[0];
        let initial = evaluate_band(&square(), Scheme::Gift, &mesh(1), &cfg).unwrap();
        let worst = initial.iter().map(|e| e.row.delta_phi).fold(0.0, f64::max);
        assert_eq!(first.delta_phi, worst);
    }
}
