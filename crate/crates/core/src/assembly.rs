//! Reissner-Mindlin material law, element integration, conforming multi-patch coupling,
//! Dirichlet conditions and global assembly of K and M.

use crate::discretization::{build_space, Scheme, SolutionSpace};
use crate::error::{PlateError, Result};
use crate::pht::HierTMesh;
use crate::quadrature::gauss_legendre_unit;
use crate::spline::{map_geometry, BasisValue, Edge, Interface, PatchGeometry};
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub type SparseMat = SparseColMat<usize, f64>;

fn default_kappa() -> f64 {
    5.0 / 6.0
}

/// Isotropic plate material, constant per patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    #[serde(rename = "E")]
    pub e: f64,
    pub nu: f64,
    pub rho: f64,
    pub h: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

impl MaterialParams {
    pub fn new(e: f64, nu: f64, rho: f64, h: f64) -> Self {
        MaterialParams { e, nu, rho, h, kappa: default_kappa() }
    }

    pub fn shear_modulus(&self) -> f64 {
        self.e / (2.0 * (1.0 + self.nu))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.e > 0.0) {
            errs.push(format!("E must be positive, got {}", self.e));
        }
        if !(0.0..0.5).contains(&self.nu) {
            errs.push(format!("nu must lie in [0, 0.5), got {}", self.nu));
        }
        if !(self.rho > 0.0) {
            errs.push(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.h > 0.0) {
            errs.push(format!("h must be positive, got {}", self.h));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            errs.push(format!("kappa must lie in (0, 1], got {}", self.kappa));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PlateError::Argument(errs.join("; ")))
        }
    }
}

/// Bending matrix D, shear stiffness kappa G h and the inertia diagonal (h, h^3/12, h^3/12).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticMatrices {
    pub d: [[f64; 3]; 3],
    pub shear: f64,
    pub inertia: [f64; 3],
}

pub fn elastic_matrices(mat: &MaterialParams) -> Result<ElasticMatrices> {
    mat.validate()?;
    let nu = mat.nu;
    let c = mat.e * mat.h.powi(3) / (12.0 * (1.0 - nu * nu));
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]];
    let h3 = mat.h.powi(3) / 12.0;
    Ok(ElasticMatrices { d, shear: mat.kappa * mat.shear_modulus() * mat.h, inertia: [mat.h, h3, h3] })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Clamped,
    SimplySupported,
    #[default]
    Free,
}

/// One patch: geometry, material and conditions on (south, east, north, west).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchModel {
    pub geometry: PatchGeometry,
    pub material: MaterialParams,
    pub bc: [BoundaryCondition; 4],
}

impl PatchModel {
    pub fn bc_on(&self, edge: Edge) -> BoundaryCondition {
        self.bc[edge_index(edge)]
    }
}

pub fn edge_index(edge: Edge) -> usize {
    match edge {
        Edge::South => 0,
        Edge::East => 1,
        Edge::North => 2,
        Edge::West => 3,
    }
}

/// Multi-patch plate with its interface graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateModel {
    pub patches: Vec<PatchModel>,
    pub interfaces: Vec<Interface>,
}

impl PlateModel {
    pub fn is_interface_edge(&self, patch: usize, edge: Edge) -> bool {
        self.interfaces
            .iter()
            .any(|i| (i.patch_a == patch && i.edge_a == edge) || (i.patch_b == patch && i.edge_b == edge))
    }

    /// Uniform condition on every outer edge.
    pub fn with_outer_bc(mut self, bc: BoundaryCondition) -> Self {
        for p in 0..self.patches.len() {
            for e in Edge::ALL {
                if !self.is_interface_edge(p, e) {
                    self.patches[p].bc[edge_index(e)] = bc;
                }
            }
        }
        self
    }

    /// Model from geometries with detected interfaces, one material, and a uniform outer condition.
    pub fn from_geometries(geoms: Vec<PatchGeometry>, materials: Vec<MaterialParams>, bc: BoundaryCondition) -> Self {
        let interfaces = crate::spline::detect_interfaces(&geoms);
        let patches = geoms
            .into_iter()
            .zip(materials)
            .map(|(geometry, material)| PatchModel { geometry, material, bc: [BoundaryCondition::Free; 4] })
            .collect();
        PlateModel { patches, interfaces }.with_outer_bc(bc)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (p, pm) in self.patches.iter().enumerate() {
            if let Err(e) = pm.geometry.validate() {
                errs.push(format!("patch {p}: {e}"));
            }
            if let Err(e) = pm.material.validate() {
                errs.push(format!("patch {p}: {e}"));
            }
        }
        for i in &self.interfaces {
            for (p, e) in [(i.patch_a, i.edge_a), (i.patch_b, i.edge_b)] {
                if p >= self.patches.len() {
                    errs.push(format!("interface references missing patch {p}"));
                } else if self.patches[p].bc_on(e) != BoundaryCondition::Free {
                    errs.push(format!("patch {p} edge {} is an interface but carries a boundary condition", e.name()));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PlateError::Model(errs.join("; ")))
        }
    }
}

/// Map from per-patch basis functions to global dofs (w, theta_x, theta_y interleaved).
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub global_basis: Vec<Vec<usize>>,
    pub n_basis: usize,
    pub constrained: Vec<bool>,
    /// Free index per dof, `usize::MAX` when constrained.
    pub free_of: Vec<usize>,
    pub free_dofs: Vec<usize>,
}

impl DofMap {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_basis
    }

    /// Free-dof vector lifted to all dofs (constrained entries zero).
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_dofs()];
        for (i, &d) in self.free_dofs.iter().enumerate() {
            full[d] = free[i];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d]).collect()
    }

    /// Per-patch local coefficients of one field from a full dof vector.
    pub fn patch_field(&self, full: &[f64], patch: usize, field: usize) -> Vec<f64> {
        self.global_basis[patch].iter().map(|&g| full[3 * g + field]).collect()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Identifies interface functions across patches and applies the boundary conditions.
pub fn build_dofmap(model: &PlateModel, spaces: &[SolutionSpace]) -> Result<DofMap> {
    if spaces.len() != model.patches.len() {
        return Err(PlateError::Argument("one solution space per patch is required".into()));
    }
    let offsets: Vec<usize> = spaces
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.num_basis();
            Some(o)
        })
        .collect();
    let total: usize = spaces.iter().map(|s| s.num_basis()).sum();
    let mut parent: Vec<usize> = (0..total).collect();
    let mut errs = Vec::new();
    for itf in &model.interfaces {
        let ta = spaces[itf.patch_a].edge_trace(itf.edge_a);
        let tb = spaces[itf.patch_b].edge_trace(itf.edge_b);
        let keyed: HashMap<_, usize> = tb
            .iter()
            .map(|&(l, k)| (if itf.reversed { k.reversed() } else { k }, l))
            .collect();
        let mut matched = 0;
        for &(la, ka) in &ta {
            match keyed.get(&ka) {
                Some(&lb) => {
                    let (x, y) = (find(&mut parent, offsets[itf.patch_a] + la), find(&mut parent, offsets[itf.patch_b] + lb));
                    if x != y {
                        parent[x.max(y)] = x.min(y);
                    }
                    matched += 1;
                }
                None => errs.push(format!(
                    "patch {} {} / patch {} {}: no partner for edge function at {}/{}",
                    itf.patch_a,
                    itf.edge_a.name(),
                    itf.patch_b,
                    itf.edge_b.name(),
                    ka.pos,
                    ka.len
                )),
            }
        }
        if matched != tb.len() && errs.is_empty() {
            errs.push(format!(
                "patch {} {} / patch {} {}: {} vs {} edge functions",
                itf.patch_a,
                itf.edge_a.name(),
                itf.patch_b,
                itf.edge_b.name(),
                ta.len(),
                tb.len()
            ));
        }
    }
    if !errs.is_empty() {
        return Err(PlateError::Coupling(errs.join("; ")));
    }
    let mut id_of_root = HashMap::new();
    let mut global_basis = Vec::with_capacity(spaces.len());
    for (p, s) in spaces.iter().enumerate() {
        let mut g = Vec::with_capacity(s.num_basis());
        for l in 0..s.num_basis() {
            let r = find(&mut parent, offsets[p] + l);
            let next = id_of_root.len();
            g.push(*id_of_root.entry(r).or_insert(next));
        }
        global_basis.push(g);
    }
    let n_basis = id_of_root.len();
    let mut constrained = vec![false; 3 * n_basis];
    for (p, pm) in model.patches.iter().enumerate() {
        for e in Edge::ALL {
            let fields: &[usize] = match pm.bc_on(e) {
                BoundaryCondition::Free => continue,
                BoundaryCondition::SimplySupported => &[0],
                BoundaryCondition::Clamped => &[0, 1, 2],
            };
            if model.is_interface_edge(p, e) {
                return Err(PlateError::Model(format!("patch {p} edge {} is an interface", e.name())));
            }
            for (l, _) in spaces[p].edge_trace(e) {
                for &f in fields {
                    constrained[3 * global_basis[p][l] + f] = true;
                }
            }
        }
    }
    let mut free_of = vec![usize::MAX; 3 * n_basis];
    let mut free_dofs = Vec::new();
    for d in 0..3 * n_basis {
        if !constrained[d] {
            free_of[d] = free_dofs.len();
            free_dofs.push(d);
        }
    }
    Ok(DofMap { global_basis, n_basis, constrained, free_of, free_dofs })
}

/// Gauss rule on [0,1]^2 as (s, t, weight).
pub fn tensor_rule(order: usize) -> Vec<(f64, f64, f64)> {
    let (x, w) = gauss_legendre_unit(order);
    let mut out = Vec::with_capacity(order * order);
    for j in 0..order {
        for i in 0..order {
            out.push((x[i], x[j], w[i] * w[j]));
        }
    }
    out
}

/// Integration point on a patch: basis values with physical gradients, and the measure.
pub struct PointEval {
    pub basis: Vec<BasisValue>,
    pub grad: Vec<[f64; 2]>,
    pub dvol: f64,
    pub point: [f64; 2],
}

/// Evaluates basis values, physical gradients and the quadrature measure at one point.
pub fn eval_point(
    geometry: &PatchGeometry,
    space: &SolutionSpace,
    e: usize,
    xi: f64,
    eta: f64,
    weight: f64,
    patch: usize,
) -> Result<PointEval> {
    let g = map_geometry(geometry, xi, eta).map_err(|err| PlateError::Assembly {
        patch,
        cell: space.element_id(e),
        msg: err.to_string(),
    })?;
    let mut basis = Vec::new();
    space.eval(e, xi, eta, &mut basis);
    let j = g.jacobian;
    let det = g.jac_det;
    let grad = basis
        .iter()
        .map(|b| {
            [
                (j[1][1] * b.d_xi - j[1][0] * b.d_eta) / det,
                (-j[0][1] * b.d_xi + j[0][0] * b.d_eta) / det,
            ]
        })
        .collect();
    Ok(PointEval { basis, grad, dvol: weight * det.abs(), point: g.point })
}

/// Element matrices over local basis functions; entries (3a+i, 3b+j) row-major.
#[derive(Clone, Debug)]
pub struct ElementSystem {
    pub local: Vec<usize>,
    pub k: Vec<f64>,
    pub m: Vec<f64>,
}

pub fn element_system(
    model: &PlateModel,
    spaces: &[SolutionSpace],
    patch: usize,
    e: usize,
    rule: &[(f64, f64, f64)],
) -> Result<ElementSystem> {
    let pm = &model.patches[patch];
    let em = elastic_matrices(&pm.material)?;
    let space = &spaces[patch];
    let r = space.element_rect(e);
    let (hx, hy) = (r[1] - r[0], r[3] - r[2]);
    let mut local = Vec::new();
    let mut k = Vec::new();
    let mut m = Vec::new();
    let d = em.d;
    let kg = em.shear;
    let rho = pm.material.rho;
    for &(s, t, w) in rule {
        let pe = eval_point(&pm.geometry, space, e, r[0] + s * hx, r[2] + t * hy, w * hx * hy, patch)?;
        if local.is_empty() {
            local = pe.basis.iter().map(|b| b.index).collect();
            let nd = 3 * local.len();
            k = vec![0.0; nd * nd];
            m = vec![0.0; nd * nd];
        }
        let nd = 3 * local.len();
        let dv = pe.dvol;
        for (a, ba) in pe.basis.iter().enumerate() {
            let (na, [xa, ya]) = (ba.value, pe.grad[a]);
            for (b, bb) in pe.basis.iter().enumerate() {
                let (nb, [xb, yb]) = (bb.value, pe.grad[b]);
                let blk = [
                    [kg * (xa * xb + ya * yb), -kg * xa * nb, -kg * ya * nb],
                    [
                        -kg * na * xb,
                        kg * na * nb + d[0][0] * xa * xb + d[0][2] * xa * yb + d[2][0] * ya * xb + d[2][2] * ya * yb,
                        d[0][1] * xa * yb + d[0][2] * xa * xb + d[2][1] * ya * yb + d[2][2] * ya * xb,
                    ],
                    [
                        -kg * na * yb,
                        d[1][0] * ya * xb + d[1][2] * ya * yb + d[2][0] * xa * xb + d[2][2] * xa * yb,
                        kg * na * nb + d[1][1] * ya * yb + d[1][2] * ya * xb + d[2][1] * xa * yb + d[2][2] * xa * xb,
                    ],
                ];
                let mm = rho * na * nb * dv;
                for i in 0..3 {
                    let row = (3 * a + i) * nd + 3 * b;
                    for j in 0..3 {
                        k[row + j] += blk[i][j] * dv;
                    }
                    m[row + i] += mm * em.inertia[i];
                }
            }
        }
    }
    Ok(ElementSystem { local, k, m })
}

/// Stiffness and mass on the free dofs with the dof map used.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub k: SparseMat,
    pub m: SparseMat,
    pub dofmap: DofMap,
}

impl SystemMatrices {
    pub fn n(&self) -> usize {
        self.dofmap.n_free()
    }
}

/// Global K and M on the free dofs, Gauss rule of `order` points per direction and leaf.
pub fn assemble(model: &PlateModel, spaces: &[SolutionSpace], order: usize) -> Result<SystemMatrices> {
    model.validate()?;
    let dofmap = build_dofmap(model, spaces)?;
    let rule = tensor_rule(order);
    let jobs: Vec<(usize, usize)> = spaces
        .iter()
        .enumerate()
        .flat_map(|(p, s)| (0..s.num_elements()).map(move |e| (p, e)))
        .collect();
    let parts: Vec<Result<(Vec<Triplet<usize, usize, f64>>, Vec<Triplet<usize, usize, f64>>)>> = jobs
        .par_iter()
        .map(|&(p, e)| {
            let es = element_system(model, spaces, p, e, &rule)?;
            let dofs: Vec<usize> = es
                .local
                .iter()
                .flat_map(|&l| {
                    let g = dofmap.global_basis[p][l];
                    [3 * g, 3 * g + 1, 3 * g + 2]
                })
                .collect();
            let nd = dofs.len();
            let mut tk = Vec::with_capacity(nd * nd);
            let mut tm = Vec::with_capacity(nd * nd);
            for (i, &di) in dofs.iter().enumerate() {
                let fi = dofmap.free_of[di];
                if fi == usize::MAX {
                    continue;
                }
                for (j, &dj) in dofs.iter().enumerate() {
                    let fj = dofmap.free_of[dj];
                    if fj == usize::MAX {
                        continue;
                    }
                    let kv = es.k[i * nd + j];
                    let mv = es.m[i * nd + j];
                    if kv != 0.0 {
                        tk.push(Triplet::new(fi, fj, kv));
                    }
                    if mv != 0.0 {
                        tm.push(Triplet::new(fi, fj, mv));
                    }
                }
            }
            Ok((tk, tm))
        })
        .collect();
    let mut tk = Vec::new();
    let mut tm = Vec::new();
    for part in parts {
        let (a, b) = part?;
        tk.extend(a);
        tm.extend(b);
    }
    let n = dofmap.n_free();
    let k = SparseMat::try_new_from_triplets(n, n, &tk).map_err(|e| PlateError::Numerical(format!("{e:?}")))?;
    let m = SparseMat::try_new_from_triplets(n, n, &tm).map_err(|e| PlateError::Numerical(format!("{e:?}")))?;
    Ok(SystemMatrices { k, m, dofmap })
}

/// Squared energy of a full-dof field on every element, in element order per patch.
pub fn element_energies(
    model: &PlateModel,
    spaces: &[SolutionSpace],
    dofmap: &DofMap,
    full: &[f64],
    order: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let rule = tensor_rule(order);
    let jobs: Vec<(usize, usize)> = spaces
        .iter()
        .enumerate()
        .flat_map(|(p, s)| (0..s.num_elements()).map(move |e| (p, e)))
        .collect();
    jobs.par_iter()
        .map(|&(p, e)| {
            let es = element_system(model, spaces, p, e, &rule)?;
            let x: Vec<f64> = es
                .local
                .iter()
                .flat_map(|&l| {
                    let g = dofmap.global_basis[p][l];
                    [full[3 * g], full[3 * g + 1], full[3 * g + 2]]
                })
                .collect();
            let nd = x.len();
            let mut s = 0.0;
            for i in 0..nd {
                let mut row = 0.0;
                for j in 0..nd {
                    row += es.k[i * nd + j] * x[j];
                }
                s += x[i] * row;
            }
            Ok((p, e, s))
        })
        .collect()
}

/// Matrix Market coordinate dump (lower triangle).
pub fn matrix_market(mat: &SparseMat) -> String {
    let mut body = String::new();
    let mut nnz = 0;
    for j in 0..mat.ncols() {
        let rows = mat.symbolic().row_idx_of_col_raw(j);
        let vals = mat.val_of_col(j);
        for (&i, &v) in rows.iter().zip(vals) {
            if i >= j {
                body.push_str(&format!("{} {} {:.17e}\n", i + 1, j + 1, v));
                nnz += 1;
            }
        }
    }
    format!("%%MatrixMarket matrix coordinate real symmetric\n{} {} {}\n{}", mat.nrows(), mat.ncols(), nnz, body)
}

/// Refines leaves along interfaces until both sides of every interface share their edge vertices.
/// Returns one report line per forced refinement.
pub fn conform_interfaces(meshes: &mut [HierTMesh], interfaces: &[Interface]) -> Result<Vec<String>> {
    let mut report = Vec::new();
    loop {
        let mut changed = false;
        for itf in interfaces {
            let len_a = edge_len(&meshes[itf.patch_a], itf.edge_a);
            let len_b = edge_len(&meshes[itf.patch_b], itf.edge_b);
            if len_a != len_b {
                return Err(PlateError::Coupling(format!(
                    "patch {} {} and patch {} {} have different level-0 subdivisions",
                    itf.patch_a,
                    itf.edge_a.name(),
                    itf.patch_b,
                    itf.edge_b.name()
                )));
            }
            let map = |x: i64| if itf.reversed { len_a - x } else { x };
            let pa = meshes[itf.patch_a].edge_vertex_positions(itf.edge_a);
            let pb: std::collections::BTreeSet<i64> =
                meshes[itf.patch_b].edge_vertex_positions(itf.edge_b).into_iter().map(map).collect();
            for (target, edge, missing, to_local) in [
                (itf.patch_b, itf.edge_b, pa.difference(&pb).copied().collect::<Vec<_>>(), true),
                (itf.patch_a, itf.edge_a, pb.difference(&pa).copied().collect::<Vec<_>>(), false),
            ] {
                let mut marks = Vec::new();
                for pos in missing {
                    let local = if to_local { map(pos) } else { pos };
                    for (leaf, a, b) in meshes[target].boundary_leaves(edge) {
                        if a < local && local < b && !marks.contains(&leaf) {
                            marks.push(leaf);
                        }
                    }
                }
                if !marks.is_empty() {
                    for &l in &marks {
                        report.push(format!("patch {target} leaf {l} refined to match the {} interface", edge.name()));
                    }
                    meshes[target].refine(&marks)?;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(report);
        }
    }
}

fn edge_len(m: &HierTMesh, e: Edge) -> i64 {
    match e {
        Edge::South | Edge::North => m.width(),
        Edge::East | Edge::West => m.height(),
    }
}

/// Meshes, spaces and assembled system of one model under one scheme.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub scheme: Scheme,
    pub meshes: Vec<HierTMesh>,
    pub spaces: Vec<SolutionSpace>,
    pub system: SystemMatrices,
    pub order: usize,
}

impl Discretization {
    pub fn new(model: &PlateModel, scheme: Scheme, meshes: Vec<HierTMesh>, order: usize) -> Result<Self> {
        if meshes.len() != model.patches.len() {
            return Err(PlateError::Argument("one mesh per patch is required".into()));
        }
        let spaces = model
            .patches
            .iter()
            .zip(&meshes)
            .map(|(p, m)| build_space(&p.geometry, scheme, m))
            .collect::<Result<Vec<_>>>()?;
        let system = assemble(model, &spaces, order)?;
        Ok(Discretization { scheme, meshes, spaces, system, order })
    }

    /// Uniform meshes: `n0` by `n0` level-0 cells refined `levels` times on every patch.
    pub fn uniform(model: &PlateModel, scheme: Scheme, n0: usize, levels: usize, order: usize) -> Result<Self> {
        let mut meshes = Vec::with_capacity(model.patches.len());
        for _ in &model.patches {
            let mut m = HierTMesh::new(n0, n0)?;
            for _ in 0..levels {
                m.refine_uniform();
            }
            meshes.push(m);
        }
        Discretization::new(model, scheme, meshes, order)
    }

    /// Total dofs including constrained ones.
    pub fn dofs(&self) -> usize {
        self.system.dofmap.n_dofs()
    }

    pub fn n_free(&self) -> usize {
        self.system.n()
    }

    /// Leaves of every patch as (patch, cell id).
    pub fn leaves(&self) -> Vec<(usize, usize)> {
        self.spaces
            .iter()
            .enumerate()
            .flat_map(|(p, s)| (0..s.num_elements()).map(move |e| (p, s.element_id(e))))
            .collect()
    }
}

/// Mass coupling between two discretizations of one model on nested meshes:
/// rows are free dofs of `fine`, columns free dofs of `coarse`.
pub fn assemble_cross_mass(model: &PlateModel, fine: &Discretization, coarse: &Discretization) -> Result<SparseMat> {
    let rule = tensor_rule(fine.order);
    let jobs: Vec<(usize, usize)> = fine
        .spaces
        .iter()
        .enumerate()
        .flat_map(|(p, s)| (0..s.num_elements()).map(move |e| (p, e)))
        .collect();
    let fd = &fine.system.dofmap;
    let cd = &coarse.system.dofmap;
    let parts: Vec<Result<Vec<Triplet<usize, usize, f64>>>> = jobs
        .par_iter()
        .map(|&(p, e)| {
            let pm = &model.patches[p];
            let em = elastic_matrices(&pm.material)?;
            let fs = &fine.spaces[p];
            let cs = &coarse.spaces[p];
            let r = fs.element_rect(e);
            let (hx, hy) = (r[1] - r[0], r[3] - r[2]);
            let ce = cs.locate(r[0] + 0.5 * hx, r[2] + 0.5 * hy);
            let mut cb = Vec::new();
            let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
            for &(s, t, w) in &rule {
                let (xi, eta) = (r[0] + s * hx, r[2] + t * hy);
                let pe = eval_point(&pm.geometry, fs, e, xi, eta, w * hx * hy, p)?;
                cs.eval(ce, xi, eta, &mut cb);
                for a in &pe.basis {
                    for b in &cb {
                        *acc.entry((a.index, b.index)).or_insert(0.0) += pm.material.rho * a.value * b.value * pe.dvol;
                    }
                }
            }
            let mut out = Vec::with_capacity(3 * acc.len());
            for ((a, b), v) in acc {
                let (ga, gb) = (fd.global_basis[p][a], cd.global_basis[p][b]);
                for f in 0..3 {
                    let (i, j) = (fd.free_of[3 * ga + f], cd.free_of[3 * gb + f]);
                    if i != usize::MAX && j != usize::MAX && v != 0.0 {
                        out.push(Triplet::new(i, j, v * em.inertia[f]));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut trip = Vec::new();
    for p in parts {
        trip.extend(p?);
    }
    SparseMat::try_new_from_triplets(fd.n_free(), cd.n_free(), &trip).map_err(|e| PlateError::Numerical(format!("{e:?}")))
}

/// Free-dof coefficient vector of per-patch fields (w, theta_x, theta_y) given as functions of the
/// physical point, by L2 projection on each patch. Interface values are taken from the last patch.
pub fn project_fields(
    model: &PlateModel,
    disc: &Discretization,
    f: &(dyn Fn(f64, f64) -> [f64; 3] + Sync),
) -> Result<Vec<f64>> {
    let dm = &disc.system.dofmap;
    let mut full = vec![0.0; dm.n_dofs()];
    for (p, pm) in model.patches.iter().enumerate() {
        for field in 0..3 {
            let g = |xi: f64, eta: f64| {
                let pt = pm.geometry.eval(xi, eta).map(|s| s.point).unwrap_or([f64::NAN; 2]);
                f(pt[0], pt[1])[field]
            };
            let c = crate::discretization::l2_project(&disc.spaces[p], &g, disc.order + 2)?;
            for (l, v) in c.into_iter().enumerate() {
                full[3 * dm.global_basis[p][l] + field] = v;
            }
        }
    }
    Ok(dm.restrict(&full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::TensorSpace;
    use crate::eigen::{bilinear, count_below, dense_eigen, dense_eigenvalues, norm1};
    use crate::spline::{bilinear_patch, disk_single_patch, rectangle_patches, KnotVector};

    fn mat() -> MaterialParams {
        MaterialParams::new(1.0, 0.3, 1.0, 0.1)
    }

    fn square(bc: BoundaryCondition) -> PlateModel {
        PlateModel::from_geometries(rectangle_patches(1.0, 1.0, 1, 1), vec![mat()], bc)
    }

    fn sym_error(a: &SparseMat) -> f64 {
        let d = a.to_dense();
        let n = d.nrows();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += (d[(i, j)] - d[(j, i)]).powi(2);
                den += d[(i, j)].powi(2);
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn elastic_matrix_closed_forms() {
        let em = elastic_matrices(&MaterialParams::new(1.0, 0.0, 1.0, 0.1)).unwrap();
        let c = 0.001 / 12.0;
        let want = [[c, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, 0.5 * c]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((em.d[i][j] - want[i][j]).abs() < 1e-18);
            }
        }
        let em = elastic_matrices(&mat()).unwrap();
        assert!((em.d[0][0] - 0.001 / (12.0 * 0.91)).abs() < 1e-18);
        assert!((em.inertia.iter().sum::<f64>() - (0.1 + 0.001 / 6.0)).abs() < 1e-15);
        assert!((em.shear - 5.0 / 6.0 / 2.6 * 0.1).abs() < 1e-15);
        assert!(elastic_matrices(&MaterialParams::new(1.0, 0.5, 1.0, 0.1)).is_err());
    }

    #[test]
    fn mass_ones_contraction_is_area() {
        let model = PlateModel::from_geometries(rectangle_patches(2.0, 1.5, 1, 1), vec![mat()], BoundaryCondition::Free);
        let d = Discretization::uniform(&model, Scheme::Gift, 1, 0, 4).unwrap();
        let m = d.system.m.to_dense();
        let mut s = 0.0;
        for i in (0..m.nrows()).step_by(3) {
            for j in (0..m.ncols()).step_by(3) {
                s += m[(i, j)];
            }
        }
        assert!((s - 0.1 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn matrices_symmetric_and_mass_definite() {
        let model = PlateModel::from_geometries(vec![disk_single_patch(1.0)], vec![mat()], BoundaryCondition::Clamped);
        let d = Discretization::uniform(&model, Scheme::Gift, 1, 1, 4).unwrap();
        assert!(sym_error(&d.system.k) < 1e-12);
        assert!(sym_error(&d.system.m) < 1e-12);
        assert!(d.system.m.to_dense().llt(faer::Side::Lower).is_ok());
    }

    #[test]
    fn rigid_modes_are_annihilated() {
        let disk = PlateModel::from_geometries(vec![disk_single_patch(1.0)], vec![mat()], BoundaryCondition::Free);
        for (model, scheme) in [(square(BoundaryCondition::Free), Scheme::Gift), (disk, Scheme::IgaNurbs)] {
            let d = Discretization::uniform(&model, scheme, 1, 1, 4).unwrap();
            let nk = norm1(&d.system.k);
            let fields: [&(dyn Fn(f64, f64) -> [f64; 3] + Sync); 3] =
                [&|_, _| [1.0, 0.0, 0.0], &|x, _| [x, 1.0, 0.0], &|_, y| [y, 0.0, 1.0]];
            for f in fields {
                let v = project_fields(&model, &d, f).unwrap();
                let e = bilinear(&d.system.k, &v, &v);
                assert!(e.abs() < 1e-12 * nk * crate::eigen::dot(&v, &v), "{e}");
            }
        }
    }

    #[test]
    fn free_disk_has_three_zero_modes() {
        let model = PlateModel::from_geometries(vec![disk_single_patch(1.0)], vec![mat()], BoundaryCondition::Free);
        let d = Discretization::uniform(&model, Scheme::IgaNurbs, 3, 0, 4).unwrap();
        let ev = dense_eigenvalues(&d.system.k, &d.system.m).unwrap();
        let top = ev.last().copied().unwrap();
        assert_eq!(ev.iter().filter(|v| v.abs() < 1e-10 * top).count(), 3);
        assert!(ev[3] > 1e-6 * top);
    }

    #[test]
    fn gift_equals_tensor_iga_on_square() {
        let model = square(BoundaryCondition::SimplySupported);
        let g = Discretization::uniform(&model, Scheme::Gift, 2, 0, 4).unwrap();
        let t = SolutionSpace::Tensor(TensorSpace::new(KnotVector::uniform(3, 2, 2), KnotVector::uniform(3, 2, 2)).unwrap());
        let s = assemble(&model, &[t], 4).unwrap();
        assert_eq!(g.n_free(), s.n());
        let a = dense_eigenvalues(&g.system.k, &g.system.m).unwrap();
        let b = dense_eigenvalues(&s.k, &s.m).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        let fro = |m: &SparseMat| m.to_dense().norm_l2();
        assert!((fro(&g.system.k) - fro(&s.k)).abs() < 1e-12 * fro(&s.k));
        assert!((fro(&g.system.m) - fro(&s.m)).abs() < 1e-12 * fro(&s.m));
    }

    #[test]
    fn split_square_matches_single_patch() {
        let split = PlateModel::from_geometries(rectangle_patches(2.0, 1.0, 2, 1), vec![mat(); 2], BoundaryCondition::Clamped);
        assert_eq!(split.interfaces.len(), 1);
        let cubic = || SolutionSpace::Tensor(TensorSpace::new(KnotVector::uniform(3, 1, 1), KnotVector::uniform(3, 1, 1)).unwrap());
        let a = assemble(&split, &[cubic(), cubic()], 4).unwrap();
        assert_eq!(a.dofmap.n_basis, 2 * 16 - 4);
        let single = PlateModel::from_geometries(
            vec![bilinear_patch([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]])],
            vec![mat()],
            BoundaryCondition::Clamped,
        );
        let c0 = KnotVector::new(3, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let ts = SolutionSpace::Tensor(TensorSpace::new(c0, KnotVector::uniform(3, 1, 1)).unwrap());
        let b = assemble(&single, &[ts], 4).unwrap();
        assert_eq!(a.n(), b.n());
        let ea = dense_eigen(&a.k, &a.m, 10).unwrap().values;
        let eb = dense_eigen(&b.k, &b.m, 10).unwrap().values;
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).abs() < 1e-10 * y);
        }
    }

    #[test]
    fn boundary_conditions_remove_expected_dofs() {
        let ss = Discretization::uniform(&square(BoundaryCondition::SimplySupported), Scheme::Gift, 1, 1, 4).unwrap();
        let cl = Discretization::uniform(&square(BoundaryCondition::Clamped), Scheme::Gift, 1, 1, 4).unwrap();
        let edge_fns = 4 * 6 - 4;
        assert_eq!(ss.dofs() - ss.n_free(), edge_fns);
        assert_eq!(cl.dofs() - cl.n_free(), 3 * edge_fns);
    }

    #[test]
    fn interface_with_boundary_condition_is_rejected() {
        let mut model = PlateModel::from_geometries(rectangle_patches(2.0, 1.0, 2, 1), vec![mat(); 2], BoundaryCondition::Free);
        model.patches[0].bc[edge_index(Edge::East)] = BoundaryCondition::Clamped;
        assert!(matches!(Discretization::uniform(&model, Scheme::Gift, 1, 0, 4), Err(PlateError::Model(_))));
    }

    #[test]
    fn nonconforming_interface_is_reported_and_repaired() {
        let model = PlateModel::from_geometries(rectangle_patches(2.0, 1.0, 2, 1), vec![mat(); 2], BoundaryCondition::Free);
        let mut meshes = vec![HierTMesh::new(1, 1).unwrap(), HierTMesh::new(1, 1).unwrap()];
        meshes[0].refine_uniform();
        let err = Discretization::new(&model, Scheme::Gift, meshes.clone(), 4).unwrap_err();
        assert!(matches!(err, PlateError::Coupling(_)));
        let report = conform_interfaces(&mut meshes, &model.interfaces).unwrap();
        assert!(!report.is_empty());
        let d = Discretization::new(&model, Scheme::Gift, meshes, 4).unwrap();
        assert_eq!(d.meshes[1].leaves().len(), 4);
    }

    #[test]
    fn quadrature_order_is_stable_on_polynomial_geometry() {
        let model = square(BoundaryCondition::SimplySupported);
        let a = Discretization::uniform(&model, Scheme::Gift, 1, 2, 4).unwrap();
        let b = Discretization::uniform(&model, Scheme::Gift, 1, 2, 5).unwrap();
        let ea = dense_eigen(&a.system.k, &a.system.m, 10).unwrap().values;
        let eb = dense_eigen(&b.system.k, &b.system.m, 10).unwrap().values;
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).abs() < 1e-10 * y);
        }
    }

    #[test]
    fn eigenvalues_do_not_increase_under_nested_refinement() {
        let model = square(BoundaryCondition::SimplySupported);
        let mut mesh = HierTMesh::new(1, 1).unwrap();
        mesh.refine_uniform();
        let mut prev: Option<Vec<f64>> = None;
        for step in 0..4 {
            let d = Discretization::new(&model, Scheme::Gift, vec![mesh.clone()], 4).unwrap();
            let ev = dense_eigen(&d.system.k, &d.system.m, 6).unwrap().values;
            if let Some(p) = &prev {
                for (a, b) in ev.iter().zip(p) {
                    assert!(*a <= b * (1.0 + 1e-12), "step {step}");
                }
            }
            prev = Some(ev);
            let leaves = mesh.leaves();
            mesh.refine(&leaves[..1 + leaves.len() / 3]).unwrap();
        }
    }

    #[test]
    fn cross_mass_on_identical_meshes_is_mass() {
        let model = square(BoundaryCondition::SimplySupported);
        let d = Discretization::uniform(&model, Scheme::Gift, 1, 1, 4).unwrap();
        let c = assemble_cross_mass(&model, &d, &d).unwrap().to_dense();
        let m = d.system.m.to_dense();
        assert!((&c - &m).norm_l2() < 1e-14 * m.norm_l2());
    }

    #[test]
    fn inertia_of_clamped_plate() {
        let model = square(BoundaryCondition::Clamped);
        let d = Discretization::uniform(&model, Scheme::Gift, 1, 1, 4).unwrap();
        assert_eq!(count_below(&d.system.k, &d.system.m, 0.0).unwrap(), 0);
    }

    #[test]
    fn matrix_market_header() {
        let model = square(BoundaryCondition::Clamped);
        let d = Discretization::uniform(&model, Scheme::Gift, 1, 0, 4).unwrap();
        let mm = matrix_market(&d.system.m);
        let mut lines = mm.lines();
        assert_eq!(lines.next(), Some("%%MatrixMarket matrix coordinate real symmetric"));
        assert!(lines.next().unwrap().starts_with(&format!("{} {}", d.n_free(), d.n_free())));
    }
}
