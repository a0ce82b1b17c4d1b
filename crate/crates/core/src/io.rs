//! Model files, result serialization, the disk benchmark table and mode-shape sampling.

use crate::assembly::{build_dofmap, BoundaryCondition, Discretization, MaterialParams, PatchModel, PlateModel};
use crate::discretization::{build_space, Scheme};
use crate::eigen::{solve_eigen, EigenOptions};
use crate::error::{PlateError, Result};
use crate::estimate::{AdaptConfig, ProlongationMethod};
use crate::pht::HierTMesh;
use crate::spline::{
    detect_interfaces, disk_five_patch, disk_single_patch, rectangle_patches, Edge, KnotVector,
    PatchGeometry,
};
use crate::sweep::{Strategy, SweepConfig};
use crate::tracking::{TrackMethod, TrackingConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Circular plate; `patches` is 1 (single rational patch) or 5 (square core and four ring patches).
    Disk {
        radius: f64,
        #[serde(default = "one")]
        patches: usize,
        /// Half-width of the core square relative to the radius (five-patch only).
        #[serde(default = "default_core")]
        core: f64,
    },
    /// Rectangle split into an nx x ny grid of patches.
    Rectangle {
        lx: f64,
        ly: f64,
        #[serde(default = "one")]
        nx: usize,
        #[serde(default = "one")]
        ny: usize,
    },
    /// Explicit NURBS patches.
    Patches { patch: Vec<PatchSpec> },
}

fn one() -> usize {
    1
}

fn default_core() -> f64 {
    0.4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub id: usize,
    pub degree: [usize; 2],
    pub knots_u: Vec<f64>,
    pub knots_v: Vec<f64>,
    pub control_points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialEntry {
    pub id: String,
    #[serde(rename = "E")]
    pub e: f64,
    pub nu: f64,
    pub rho: f64,
    pub h: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    5.0 / 6.0
}

impl MaterialEntry {
    pub fn params(&self) -> MaterialParams {
        MaterialParams { e: self.e, nu: self.nu, rho: self.rho, h: self.h, kappa: self.kappa }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub patch: usize,
    pub material: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeCondition {
    pub patch: usize,
    pub edge: Edge,
    pub condition: BoundaryCondition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySpec {
    /// Condition on every outer edge not listed explicitly.
    pub default: BoundaryCondition,
    pub edge: Vec<EdgeCondition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub scheme: Scheme,
    /// Level-0 elements per direction of every patch.
    pub divisions: usize,
    /// Uniform refinements of the initial mesh.
    pub levels: usize,
    pub quad_order: usize,
    pub n_modes: usize,
    /// Mode index for single-mode adaptation.
    pub mode: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    pub strategy: Strategy,
    pub tracking: TrackMethod,
    pub prolongation: ProlongationMethod,
    pub tau: f64,
    pub tau_lambda: f64,
    pub tau_phi: f64,
    pub l_e: usize,
    pub max_steps: usize,
    pub max_phases: usize,
    pub tau_lambda_mul_rel: f64,
    pub tau_mac: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub seed: u64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        let a = AdaptConfig::default();
        let t = TrackingConfig::default();
        AnalysisSpec {
            scheme: Scheme::Gift,
            divisions: 1,
            levels: 1,
            quad_order: a.quad_order,
            n_modes: 6,
            mode: 0,
            band: None,
            strategy: Strategy::SweepLowToHigh,
            tracking: a.tracking,
            prolongation: a.prolongation,
            tau: a.tau,
            tau_lambda: a.tau_lambda,
            tau_phi: a.tau_phi,
            l_e: a.l_e,
            max_steps: a.max_steps,
            max_phases: 100,
            tau_lambda_mul_rel: t.tau_lambda_mul_rel,
            tau_mac: t.tau_mac,
            margin: t.margin,
            seed: a.seed,
        }
    }
}

/// Parsed model file. Parsing fills every default, so serializing echoes the full configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub geometry: GeometrySpec,
    pub material: Vec<MaterialEntry>,
    #[serde(default)]
    pub assign: Vec<Assignment>,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

impl ModelFile {
    /// Parses and validates; syntax errors carry line and column, semantic errors are batched.
    pub fn parse(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| PlateError::Syntax(e.to_string().trim_end().to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlateError::Internal(e.to_string()))
    }

    /// Patch ids in patch order.
    pub fn patch_ids(&self) -> Vec<usize> {
        match &self.geometry {
            GeometrySpec::Disk { patches, .. } => (0..*patches).collect(),
            GeometrySpec::Rectangle { nx, ny, .. } => (0..nx * ny).collect(),
            GeometrySpec::Patches { patch } => patch.iter().map(|p| p.id).collect(),
        }
    }

    fn geometry_errors(&self, errs: &mut Vec<String>) -> Option<Vec<PatchGeometry>> {
        let before = errs.len();
        let positive = |errs: &mut Vec<String>, name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("geometry: {name} must be positive, got {v}"));
            }
        };
        match &self.geometry {
            GeometrySpec::Disk { radius, patches, core } => {
                positive(errs, "radius", *radius);
                if *patches != 1 && *patches != 5 {
                    errs.push(format!("geometry: disk supports 1 or 5 patches, got {patches}"));
                }
                if !(*core > 0.0 && *core < 1.0 / std::f64::consts::SQRT_2) {
                    errs.push(format!("geometry: core must lie in (0, 1/sqrt(2)), got {core}"));
                }
                if errs.len() > before {
                    return None;
                }
                Some(if *patches == 1 { vec![disk_single_patch(*radius)] } else { disk_five_patch(*radius, *core) })
            }
            GeometrySpec::Rectangle { lx, ly, nx, ny } => {
                positive(errs, "lx", *lx);
                positive(errs, "ly", *ly);
                if *nx == 0 || *ny == 0 {
                    errs.push("geometry: nx and ny must be positive".into());
                }
                (errs.len() == before).then(|| rectangle_patches(*lx, *ly, *nx, *ny))
            }
            GeometrySpec::Patches { patch } => {
                if patch.is_empty() {
                    errs.push("geometry: at least one patch is required".into());
                }
                let mut seen = BTreeSet::new();
                let mut out = Vec::new();
                for p in patch {
                    if !seen.insert(p.id) {
                        errs.push(format!("geometry: duplicate patch id {}", p.id));
                    }
                    let g = KnotVector::new(p.degree[0], p.knots_u.clone()).and_then(|ku| {
                        KnotVector::new(p.degree[1], p.knots_v.clone())
                            .and_then(|kv| PatchGeometry::new(ku, kv, p.control_points.clone(), p.weights.clone()))
                    });
                    match g {
                        Ok(g) => out.push(g),
                        Err(e) => errs.push(format!("geometry: patch {}: {e}", p.id)),
                    }
                }
                (errs.len() == before).then_some(out)
            }
        }
    }

    fn analysis_errors(&self, errs: &mut Vec<String>) {
        let a = &self.analysis;
        if a.divisions == 0 {
            errs.push("analysis: divisions must be positive".into());
        }
        if a.levels > 8 {
            errs.push(format!("analysis: levels must not exceed 8, got {}", a.levels));
        }
        if !(1..=10).contains(&a.quad_order) {
            errs.push(format!("analysis: quad_order must lie in 1..=10, got {}", a.quad_order));
        }
        if a.n_modes == 0 {
            errs.push("analysis: n_modes must be positive".into());
        }
        if let Some([lo, hi]) = a.band {
            if !(lo >= 0.0 && hi > lo) {
                errs.push(format!("analysis: band [{lo}, {hi}] must satisfy 0 <= min < max"));
            }
        }
        if a.max_phases == 0 {
            errs.push("analysis: max_phases must be positive".into());
        }
        for r in [self.adapt_config().validate(), self.tracking_config().validate()] {
            if let Err(PlateError::Argument(m)) = r {
                errs.extend(m.split("; ").map(|s| format!("analysis: {s}")));
            } else if let Err(e) = r {
                errs.push(format!("analysis: {e}"));
            }
        }
    }

    /// All semantic errors at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let geoms = self.geometry_errors(&mut errs);
        let ids = self.patch_ids();
        let idset: BTreeSet<usize> = ids.iter().copied().collect();
        let mut mat_ids = BTreeSet::new();
        if self.material.is_empty() {
            errs.push("material: at least one material is required".into());
        }
        for m in &self.material {
            if !mat_ids.insert(m.id.as_str()) {
                errs.push(format!("material: duplicate material id '{}'", m.id));
            }
            if let Err(e) = m.params().validate() {
                errs.push(format!("material '{}': {e}", m.id));
            }
        }
        let mut assigned = BTreeSet::new();
        for a in &self.assign {
            if !idset.contains(&a.patch) {
                errs.push(format!("assign: unknown patch id {}", a.patch));
            }
            if !mat_ids.contains(a.material.as_str()) {
                errs.push(format!("assign: unknown material id '{}'", a.material));
            }
            if !assigned.insert(a.patch) {
                errs.push(format!("assign: patch {} assigned twice", a.patch));
            }
        }
        let mut edges = BTreeSet::new();
        for e in &self.boundary.edge {
            if !idset.contains(&e.patch) {
                errs.push(format!("boundary: unknown patch id {}", e.patch));
            }
            if !edges.insert((e.patch, e.edge)) {
                errs.push(format!("boundary: patch {} edge {} listed twice", e.patch, e.edge.name()));
            }
        }
        self.analysis_errors(&mut errs);
        if let Some(geoms) = geoms {
            if errs.is_empty() {
                let interfaces = detect_interfaces(&geoms);
                for e in &self.boundary.edge {
                    let p = ids.iter().position(|&i| i == e.patch).expect("checked");
                    let on_interface =
                        interfaces.iter().any(|i| (i.patch_a == p && i.edge_a == e.edge) || (i.patch_b == p && i.edge_b == e.edge));
                    if on_interface && e.condition != BoundaryCondition::Free {
                        errs.push(format!("boundary: patch {} edge {} is an interface edge", e.patch, e.edge.name()));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PlateError::Validation(errs))
        }
    }

    pub fn geometries(&self) -> Result<Vec<PatchGeometry>> {
        let mut errs = Vec::new();
        self.geometry_errors(&mut errs).ok_or(PlateError::Validation(errs))
    }

    pub fn build_model(&self) -> Result<PlateModel> {
        self.validate()?;
        let geoms = self.geometries()?;
        let ids = self.patch_ids();
        let mats: BTreeMap<&str, MaterialParams> = self.material.iter().map(|m| (m.id.as_str(), m.params())).collect();
        let default = self.material[0].params();
        let interfaces = detect_interfaces(&geoms);
        let mut patches: Vec<PatchModel> = geoms
            .into_iter()
            .enumerate()
            .map(|(p, geometry)| {
                let material = self
                    .assign
                    .iter()
                    .find(|a| a.patch == ids[p])
                    .map_or(default, |a| mats[a.material.as_str()]);
                PatchModel { geometry, material, bc: [BoundaryCondition::Free; 4] }
            })
            .collect();
        for e in &self.boundary.edge {
            let p = ids.iter().position(|&i| i == e.patch).expect("validated");
            patches[p].bc[crate::assembly::edge_index(e.edge)] = e.condition;
        }
        let mut model = PlateModel { patches, interfaces };
        for p in 0..model.patches.len() {
            for edge in Edge::ALL {
                let listed = self.boundary.edge.iter().any(|e| e.patch == ids[p] && e.edge == edge);
                if !listed && !model.is_interface_edge(p, edge) {
                    model.patches[p].bc[crate::assembly::edge_index(edge)] = self.boundary.default;
                }
            }
        }
        model.validate()?;
        Ok(model)
    }

    pub fn initial_meshes(&self) -> Result<Vec<HierTMesh>> {
        let n = self.patch_ids().len();
        (0..n)
            .map(|_| {
                let mut m = HierTMesh::new(self.analysis.divisions, self.analysis.divisions)?;
                for _ in 0..self.analysis.levels {
                    m.refine_uniform();
                }
                Ok(m)
            })
            .collect()
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        let a = &self.analysis;
        AdaptConfig {
            tau: a.tau,
            tau_lambda: a.tau_lambda,
            tau_phi: a.tau_phi,
            l_e: a.l_e,
            max_steps: a.max_steps,
            prolongation: a.prolongation,
            tracking: a.tracking,
            quad_order: a.quad_order,
            seed: a.seed,
        }
    }

    pub fn tracking_config(&self) -> TrackingConfig {
        let a = &self.analysis;
        TrackingConfig { tau_lambda_mul_rel: a.tau_lambda_mul_rel, tau_mac: a.tau_mac, margin: a.margin, band: None }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions { n_modes: self.analysis.n_modes, seed: self.analysis.seed, ..Default::default() }
    }

    /// Sweep configuration; `band` overrides the file's band.
    pub fn sweep_config(&self, band: Option<[f64; 2]>) -> Result<SweepConfig> {
        let band = band
            .or(self.analysis.band)
            .ok_or_else(|| PlateError::Argument("no frequency band given in the model file or on the command line".into()))?;
        let cfg = SweepConfig {
            band,
            strategy: self.analysis.strategy,
            adapt: self.adapt_config(),
            tracking: self.tracking_config(),
            max_phases: self.analysis.max_phases,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Frequencies (and normalized frequencies when a reference is given) as CSV.
pub fn spectrum_csv(freqs: &[f64], reference: Option<&Reference>) -> String {
    let mut s = String::from("mode,frequency,lambda_n,reference\n");
    for (i, f) in freqs.iter().enumerate() {
        match reference.and_then(|r| r.freqs.get(i).map(|v| (v, &r.source))) {
            Some((r, src)) => writeln!(s, "{},{:.12e},{:.8},{}", i + 1, f, f / r, src).unwrap(),
            None => writeln!(s, "{},{:.12e},,", i + 1, f).unwrap(),
        }
    }
    s
}

/// Square matrix of MAC values with coarse modes as rows and fine modes as columns.
pub fn mac_csv(rows: &[usize], cols: &[usize], mac: &[Vec<f64>]) -> String {
    let mut s = String::from("coarse");
    for c in cols {
        write!(s, ",fine_{}", c + 1).unwrap();
    }
    s.push('\n');
    for (r, row) in rows.iter().zip(mac) {
        write!(s, "{}", r + 1).unwrap();
        for v in row {
            write!(s, ",{v:.6}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Samples (w, theta_x, theta_y) of a free-dof vector on a regular parametric grid of every patch.
pub fn export_mode_shape(model: &PlateModel, disc: &Discretization, mode: &[f64], resolution: usize) -> Result<String> {
    if resolution < 2 {
        return Err(PlateError::Argument(format!("grid resolution must be at least 2, got {resolution}")));
    }
    if mode.len() != disc.n_free() {
        return Err(PlateError::Argument("mode vector does not match the discretization".into()));
    }
    let full = disc.system.dofmap.expand(mode);
    let mut s = String::from("patch,i,j,xi,eta,x,y,w,theta_x,theta_y\n");
    for (p, pm) in model.patches.iter().enumerate() {
        let fields: Vec<Vec<f64>> = (0..3).map(|f| disc.system.dofmap.patch_field(&full, p, f)).collect();
        for j in 0..resolution {
            for i in 0..resolution {
                let xi = i as f64 / (resolution - 1) as f64;
                let eta = j as f64 / (resolution - 1) as f64;
                let x = pm.geometry.eval(xi, eta)?.point;
                let v: Vec<f64> = fields.iter().map(|c| disc.spaces[p].field_value(c, xi, eta)[0]).collect();
                writeln!(s, "{p},{i},{j},{xi:.6},{eta:.6},{:.15e},{:.15e},{:.12e},{:.12e},{:.12e}", x[0], x[1], v[0], v[1], v[2])
                    .unwrap();
            }
        }
    }
    Ok(s)
}

/// Reference frequencies with their provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub freqs: Vec<f64>,
    pub source: String,
}

/// Fine-mesh oracle for a disk plate: GIFT on the five-patch disk refined uniformly until the
/// largest relative change of the first `n` frequencies drops below `tol` or `max_level` is reached.
pub fn disk_reference(
    radius: f64,
    material: MaterialParams,
    bc: BoundaryCondition,
    n: usize,
    start_level: usize,
    max_level: usize,
    tol: f64,
) -> Result<Reference> {
    let geoms = disk_five_patch(radius, default_core());
    let model = PlateModel::from_geometries(geoms, vec![material; 5], bc);
    let opts = EigenOptions { n_modes: n, ..Default::default() };
    let mut prev: Option<Vec<f64>> = None;
    for level in start_level..=max_level {
        let d = Discretization::uniform(&model, Scheme::Gift, 1, level, 5)?;
        let f = solve_eigen(&d.system.k, &d.system.m, &opts)?.frequencies();
        if let Some(p) = &prev {
            let change = p.iter().zip(&f).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
            if change < tol || level == max_level {
                return Ok(Reference {
                    freqs: f,
                    source: format!("gift five-patch disk level {level} ({} dofs, change {change:.1e})", d.dofs()),
                });
            }
        }
        prev = Some(f);
    }
    Err(PlateError::Argument("reference needs at least two levels".into()))
}

/// Mesh of a single patch whose uniform discretization has exactly `target` dofs.
pub fn mesh_for_dofs(model: &PlateModel, scheme: Scheme, target: usize) -> Result<Vec<HierTMesh>> {
    let mut achievable = Vec::new();
    let count = |meshes: &[HierTMesh]| -> Result<usize> {
        let spaces = model
            .patches
            .iter()
            .zip(meshes)
            .map(|(p, m)| build_space(&p.geometry, scheme, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(build_dofmap(model, &spaces)?.n_dofs())
    };
    let candidates: Vec<Box<dyn Fn() -> Result<HierTMesh>>> = match scheme {
        Scheme::IgaNurbs => (1..=64usize).map(|n| Box::new(move || HierTMesh::new(n, n)) as Box<dyn Fn() -> _>).collect(),
        _ => (0..=6usize)
            .map(|l| {
                Box::new(move || {
                    let mut m = HierTMesh::new(1, 1)?;
                    for _ in 0..l {
                        m.refine_uniform();
                    }
                    Ok(m)
                }) as Box<dyn Fn() -> _>
            })
            .collect(),
    };
    for make in candidates {
        let meshes = (0..model.patches.len()).map(|_| make()).collect::<Result<Vec<_>>>()?;
        let n = count(&meshes)?;
        if n == target {
            return Ok(meshes);
        }
        achievable.push(n);
        if n > target {
            break;
        }
    }
    let nearest = achievable.iter().min_by_key(|&&n| n.abs_diff(target)).copied().unwrap_or(0);
    Err(PlateError::Argument(format!(
        "{target} dofs are not reachable by uniform refinement with {}; nearest achievable is {nearest}",
        scheme.name()
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scheme: Scheme,
    pub dofs: usize,
    pub frequencies: Vec<f64>,
    pub lambda_n: Vec<f64>,
    pub reference: String,
}

/// Normalized frequencies of uniform discretizations at the requested dof counts.
pub fn run_table_benchmark(
    model: &PlateModel,
    schemes: &[Scheme],
    targets: &[usize],
    quad_order: usize,
    reference: &Reference,
) -> Result<Vec<TableRow>> {
    let n = reference.freqs.len();
    let mut rows = Vec::new();
    for &scheme in schemes {
        for &t in targets {
            let meshes = mesh_for_dofs(model, scheme, t)?;
            let d = Discretization::new(model, scheme, meshes, quad_order)?;
            let f = solve_eigen(&d.system.k, &d.system.m, &EigenOptions { n_modes: n, ..Default::default() })?.frequencies();
            rows.push(TableRow {
                scheme,
                dofs: d.dofs(),
                lambda_n: f.iter().zip(&reference.freqs).map(|(a, b)| a / b).collect(),
                frequencies: f,
                reference: reference.source.clone(),
            });
        }
    }
    Ok(rows)
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let n = rows.first().map_or(0, |r| r.lambda_n.len());
    let mut s = String::from("scheme,dofs");
    for i in 0..n {
        write!(s, ",mode_{}", i + 1).unwrap();
    }
    s.push_str(",reference\n");
    for r in rows {
        write!(s, "{},{}", r.scheme.name(), r.dofs).unwrap();
        for v in &r.lambda_n {
            write!(s, ",{v:.4}").unwrap();
        }
        writeln!(s, ",{}", r.reference).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[geometry]
kind = "rectangle"
lx = 1.0
ly = 1.0

[[material]]
id = "plate"
E = 1.0
nu = 0.3
rho = 1.0
h = 0.1
"#;

    fn fixture(name: &str) -> String {
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)).unwrap()
    }

    #[test]
    fn minimal_file_gets_defaults_echoed() {
        let f = ModelFile::parse(MINIMAL).unwrap();
        assert_eq!(f.analysis, AnalysisSpec::default());
        assert_eq!(f.boundary.default, BoundaryCondition::Free);
        let echoed = f.to_toml().unwrap();
        for key in ["tau_phi", "quad_order", "scheme = \"gift\"", "kappa", "default = \"free\""] {
            assert!(echoed.contains(key), "{key} missing from\n{echoed}");
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for name in ["disk.toml", "square.toml", "hetsquare.toml"] {
            let f = ModelFile::parse(&fixture(name)).unwrap();
            let text = f.to_toml().unwrap();
            let g = ModelFile::parse(&text).unwrap();
            assert_eq!(f, g);
            assert_eq!(text, g.to_toml().unwrap());
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = ModelFile::parse("[geometry\nkind = 1").unwrap_err();
        let PlateError::Syntax(msg) = &err else { panic!("{err:?}") };
        assert!(msg.contains("line 1"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn semantic_errors_are_batched() {
        let text = format!(
            "{MINIMAL}
[[material]]
id = \"plate\"
E = -1.0
nu = 0.3
rho = 1.0
h = 0.1

[[assign]]
patch = 7
material = \"steel\"

[analysis]
tau_phi = -1.0
band = [2.0, 1.0]
"
        );
        let Err(PlateError::Validation(errs)) = ModelFile::parse(&text) else { panic!() };
        let all = errs.join("\n");
        for needle in ["duplicate material id 'plate'", "E must be positive", "unknown patch id 7", "unknown material id 'steel'", "band", "tolerances"] {
            assert!(all.contains(needle), "{needle} not in\n{all}");
        }
    }

    #[test]
    fn duplicate_patch_id_is_named() {
        let patch = "[[geometry.patch]]\nid = 3\ndegree = [1, 1]\nknots_u = [0.0, 0.0, 1.0, 1.0]\nknots_v = [0.0, 0.0, 1.0, 1.0]\ncontrol_points = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]\nweights = [1.0, 1.0, 1.0, 1.0]\n";
        let text = format!("[geometry]\nkind = \"patches\"\n{patch}{patch}\n[[material]]\nid = \"a\"\nE = 1.0\nnu = 0.3\nrho = 1.0\nh = 0.1\n");
        let Err(PlateError::Validation(errs)) = ModelFile::parse(&text) else { panic!() };
        assert!(errs.iter().any(|e| e.contains("duplicate patch id 3")), "{errs:?}");
    }

    #[test]
    fn interface_condition_rejected() {
        let text = fixture("hetsquare.toml") + "\n[[boundary.edge]]\npatch = 4\nedge = \"north\"\ncondition = \"clamped\"\n";
        let Err(PlateError::Validation(errs)) = ModelFile::parse(&text) else { panic!() };
        assert!(errs.iter().any(|e| e.contains("interface edge")));
    }

    #[test]
    fn disk_fixture_rebuilds_circle() {
        let f = ModelFile::parse(&fixture("disk.toml")).unwrap();
        let model = f.build_model().unwrap();
        assert_eq!(model.patches.len(), 1);
        for k in 0..200 {
            let t = k as f64 / 199.0;
            for edge in Edge::ALL {
                let (xi, eta) = edge.point(t);
                let x = model.patches[0].geometry.eval(xi, eta).unwrap().point;
                assert!((x[0].hypot(x[1]) - 1.0).abs() < 1e-12);
            }
        }
        assert!(model.patches[0].bc.iter().all(|&b| b == BoundaryCondition::SimplySupported));
    }

    #[test]
    fn hetsquare_assigns_soft_centre() {
        let model = ModelFile::parse(&fixture("hetsquare.toml")).unwrap().build_model().unwrap();
        assert_eq!(model.patches.len(), 9);
        for (p, pm) in model.patches.iter().enumerate() {
            assert_eq!(pm.material.e, if p == 4 { 0.05 } else { 1.0 });
        }
        assert_eq!(model.interfaces.len(), 12);
        assert!(model.patches[4].bc.iter().all(|&b| b == BoundaryCondition::Free));
    }

    #[test]
    fn mode_shape_export() {
        let f = ModelFile::parse(&fixture("disk.toml")).unwrap();
        let model = f.build_model().unwrap();
        let d = Discretization::new(&model, Scheme::Gift, f.initial_meshes().unwrap(), 4).unwrap();
        let one = crate::assembly::project_fields(&model, &d, &|_, _| [0.0, 1.0, 0.0]).unwrap();
        let csv = export_mode_shape(&model, &d, &one, 5).unwrap();
        let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 25);
        for r in &rows {
            assert!((r[8] - 1.0).abs() < 1e-10 && r[7].abs() < 1e-10 && r[9].abs() < 1e-10);
            assert!(r[5].hypot(r[6]) <= 1.0 + 1e-12);
        }
        let ep = solve_eigen(&d.system.k, &d.system.m, &EigenOptions { n_modes: 1, ..Default::default() }).unwrap();
        let csv = export_mode_shape(&model, &d, &ep.vectors[0], 9).unwrap();
        for l in csv.lines().skip(1) {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            if v[5].hypot(v[6]) > 1.0 - 1e-12 {
                assert!(v[7].abs() < 1e-8);
            }
        }
        assert!(export_mode_shape(&model, &d, &one, 1).is_err());
    }

    #[test]
    fn dof_targets_map_to_meshes() {
        let model = ModelFile::parse(&fixture("disk.toml")).unwrap().build_model().unwrap();
        for scheme in [Scheme::Gift, Scheme::IgaNurbs, Scheme::IgaRht] {
            for t in [108, 300, 972] {
                let m = mesh_for_dofs(&model, scheme, t).unwrap();
                let d = Discretization::new(&model, scheme, m, 2).unwrap();
                assert_eq!(d.dofs(), t);
            }
        }
        let err = mesh_for_dofs(&model, Scheme::Gift, 200).unwrap_err().to_string();
        assert!(err.contains("nearest achievable is 300") || err.contains("nearest achievable is 108"), "{err}");
    }

    #[test]
    fn csv_outputs() {
        let r = Reference { freqs: vec![2.0, 4.0], source: "oracle".into() };
        assert_eq!(spectrum_csv(&[2.0, 5.0], Some(&r)).lines().nth(2).unwrap(), "2,5.000000000000e0,1.25000000,oracle");
        let m = mac_csv(&[1, 2], &[1, 2], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(m, "coarse,fine_2,fine_3\n2,1.000000,0.000000\n3,0.000000,1.000000\n");
    }
}
