//! The bicubic C1 PHT-spline space of a hierarchical T-mesh.
//!
//! Every boundary or crossing vertex anchors four functions. Function k of vertex v has Hermite
//! data (f, f_xi, f_eta, f_xi_eta) at v equal to column k of the tensor-product matrix built from
//! the two 1D cubic B-splines with local knots [a,a,x,x,b] and [a,x,x,b,b] (cell size of the
//! vertex level on both sides), and zero data at every other basis vertex. Leaf corner data at a
//! T-junction comes from the polynomial of the larger leaf whose edge contains it.

use super::mesh::{HierTMesh, VertexKind};
use crate::error::{PlateError, Result};
use crate::spline::{bernstein3, BasisValue, Edge};
use std::collections::{BTreeMap, HashMap};

/// Sparse linear form over basis functions: (basis index, Hermite data).
type DataForm = Vec<(usize, [f64; 4])>;
/// Per-leaf Bezier extraction: (basis index, 16 ordinates with the xi index fastest).
pub type Extraction = Vec<(usize, [f64; 16])>;

/// A basis vertex with its Hermite data matrix (column k = data of local function k).
#[derive(Clone, Debug)]
pub struct BasisVertex {
    pub x: i64,
    pub y: i64,
    pub level: u32,
    pub kind: VertexKind,
    pub hermite: [[f64; 4]; 4],
}

/// Position along a patch edge used to match interface functions between patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceKey {
    pub pos: i64,
    pub len: i64,
    pub ty: i8,
}

impl TraceKey {
    pub fn reversed(self) -> TraceKey {
        TraceKey { pos: self.len - self.pos, len: self.len, ty: -self.ty }
    }
}

#[derive(Clone, Debug)]
pub struct PhtSpace {
    pub mesh: HierTMesh,
    pub vertices: Vec<BasisVertex>,
    vertex_index: HashMap<(i64, i64), usize>,
    /// Leaf ids, ascending.
    pub elements: Vec<usize>,
    element_of_cell: HashMap<usize, usize>,
    pub extraction: Vec<Extraction>,
}

/// Value and derivative at `t` of the cubic B-spline on five knots, evaluated from the right
/// (or from the left when `left` is set).
fn local_bspline(k: &[f64; 5], t: f64, left: bool) -> (f64, f64) {
    fn n(k: &[f64], i: usize, p: usize, t: f64, left: bool) -> f64 {
        if p == 0 {
            let inside = if left { k[i] < t && t <= k[i + 1] } else { k[i] <= t && t < k[i + 1] };
            return if inside { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        if k[i + p] > k[i] {
            v += (t - k[i]) / (k[i + p] - k[i]) * n(k, i, p - 1, t, left);
        }
        if k[i + p + 1] > k[i + 1] {
            v += (k[i + p + 1] - t) / (k[i + p + 1] - k[i + 1]) * n(k, i + 1, p - 1, t, left);
        }
        v
    }
    let val = n(k, 0, 3, t, left);
    let mut d = 0.0;
    if k[3] > k[0] {
        d += 3.0 / (k[3] - k[0]) * n(k, 0, 2, t, left);
    }
    if k[4] > k[1] {
        d -= 3.0 / (k[4] - k[1]) * n(k, 1, 2, t, left);
    }
    (val, d)
}

/// 1D data [[value_a, value_b], [deriv_a, deriv_b]] of the two functions at coordinate x
/// (parametric units), for cell size h and domain [0, len].
pub fn vertex_data_1d(x: f64, h: f64, len: f64, at_start: bool, at_end: bool) -> [[f64; 2]; 2] {
    let (ka, kb) = if at_start {
        ([x, x, x, x, x + h], [x, x, x, x + h, x + h])
    } else if at_end {
        ([x - h, x - h, x, x, x], [x - h, x, x, x, x])
    } else {
        ([x - h, x - h, x, x, x + h], [x - h, x, x, x + h, x + h])
    };
    let left = at_end && x >= len;
    let a = local_bspline(&ka, x, left);
    let b = local_bspline(&kb, x, left);
    [[a.0, b.0], [a.1, b.1]]
}

/// Bezier ordinates of a cell from its four corner data, sx/sy the inward directions.
fn corner_block(data: &[f64; 4], corner: usize, hx: f64, hy: f64, out: &mut [f64; 16]) {
    let (i0, j0) = (if corner & 1 == 0 { 0 } else { 3 }, if corner & 2 == 0 { 0 } else { 3 });
    let (sx, sy) = (if i0 == 0 { 1.0 } else { -1.0 }, if j0 == 0 { 1.0 } else { -1.0 });
    let (i1, j1) = ((i0 as isize + sx as isize) as usize, (j0 as isize + sy as isize) as usize);
    let [f, fx, fy, fxy] = *data;
    let ax = sx * hx / 3.0;
    let ay = sy * hy / 3.0;
    out[i0 + 4 * j0] += f;
    out[i1 + 4 * j0] += f + ax * fx;
    out[i0 + 4 * j1] += f + ay * fy;
    out[i1 + 4 * j1] += f + ax * fx + ay * fy + ax * ay * fxy;
}

/// Value, xi-, eta- and mixed derivative of a Bezier form at local (s,t) on a cell of size hx, hy.
pub fn bezier_hermite(b: &[f64; 16], s: f64, t: f64, hx: f64, hy: f64) -> [f64; 4] {
    let (bs, ds) = bernstein3(s);
    let (bt, dt) = bernstein3(t);
    let mut o = [0.0; 4];
    for j in 0..4 {
        for i in 0..4 {
            let c = b[i + 4 * j];
            o[0] += c * bs[i] * bt[j];
            o[1] += c * ds[i] * bt[j];
            o[2] += c * bs[i] * dt[j];
            o[3] += c * ds[i] * dt[j];
        }
    }
    [o[0], o[1] / hx, o[2] / hy, o[3] / (hx * hy)]
}

impl PhtSpace {
    /// Builds the basis registry and per-leaf Bezier ordinates for a finalized mesh.
    pub fn new(mesh: &HierTMesh) -> Result<Self> {
        let (nx, ny) = (mesh.nx as f64, mesh.ny as f64);
        let (w, h) = (mesh.width(), mesh.height());
        let mut vertices = Vec::new();
        let mut vertex_index = HashMap::new();
        let mut recs = mesh.vertices();
        recs.retain(|v| v.kind.is_basis());
        recs.sort_by_key(|v| (v.level, v.y, v.x));
        for v in recs {
            let hx = 1.0 / (nx * (1u64 << v.level) as f64);
            let hy = 1.0 / (ny * (1u64 << v.level) as f64);
            let (px, py) = mesh.to_param((v.x, v.y));
            let dx = vertex_data_1d(px, hx, 1.0, v.x == 0, v.x == w);
            let dy = vertex_data_1d(py, hy, 1.0, v.y == 0, v.y == h);
            let mut herm = [[0.0; 4]; 4];
            for (k, col) in herm.iter_mut().enumerate() {
                let (tx, ty) = (k & 1, k >> 1);
                *col = [dx[0][tx] * dy[0][ty], dx[1][tx] * dy[0][ty], dx[0][tx] * dy[1][ty], dx[1][tx] * dy[1][ty]];
            }
            vertex_index.insert((v.x, v.y), vertices.len());
            vertices.push(BasisVertex { x: v.x, y: v.y, level: v.level, kind: v.kind, hermite: herm });
        }
        let elements = mesh.leaves();
        let element_of_cell = elements.iter().enumerate().map(|(e, &c)| (c, e)).collect();
        let mut sp = PhtSpace { mesh: mesh.clone(), vertices, vertex_index, elements, element_of_cell, extraction: Vec::new() };
        sp.compute_bezier_ordinates()?;
        Ok(sp)
    }

    /// Recomputes the extraction of every leaf from the basis registry.
    pub fn compute_bezier_ordinates(&mut self) -> Result<()> {
        let mut cell_memo: HashMap<usize, Extraction> = HashMap::new();
        let mut vertex_memo: HashMap<(i64, i64), DataForm> = HashMap::new();
        let mut ext = Vec::with_capacity(self.elements.len());
        for &c in &self.elements {
            ext.push(self.cell_ordinates(c, &mut cell_memo, &mut vertex_memo)?);
        }
        self.extraction = ext;
        Ok(())
    }

    fn cell_ordinates(
        &self,
        cell: usize,
        cell_memo: &mut HashMap<usize, Extraction>,
        vertex_memo: &mut HashMap<(i64, i64), DataForm>,
    ) -> Result<Extraction> {
        if let Some(e) = cell_memo.get(&cell) {
            return Ok(e.clone());
        }
        let r = self.mesh.param_rect(cell);
        let (hx, hy) = (r[1] - r[0], r[3] - r[2]);
        let mut acc: BTreeMap<usize, [f64; 16]> = BTreeMap::new();
        for (k, v) in self.mesh.cell(cell).corners().into_iter().enumerate() {
            let form = self.corner_data(v, cell_memo, vertex_memo)?;
            for (b, d) in form {
                corner_block(&d, k, hx, hy, acc.entry(b).or_insert([0.0; 16]));
            }
        }
        let e: Extraction = acc.into_iter().filter(|(_, o)| o.iter().any(|&x| x != 0.0)).collect();
        cell_memo.insert(cell, e.clone());
        Ok(e)
    }

    fn corner_data(
        &self,
        v: (i64, i64),
        cell_memo: &mut HashMap<usize, Extraction>,
        vertex_memo: &mut HashMap<(i64, i64), DataForm>,
    ) -> Result<DataForm> {
        if let Some(&vi) = self.vertex_index.get(&v) {
            let hm = &self.vertices[vi].hermite;
            return Ok((0..4).map(|k| (4 * vi + k, hm[k])).collect());
        }
        if let Some(f) = vertex_memo.get(&v) {
            return Ok(f.clone());
        }
        let big = [(-1, -1), (1, -1), (-1, 1), (1, 1)]
            .into_iter()
            .filter_map(|(sx, sy)| self.mesh.leaf_at(v.0, v.1, sx, sy))
            .find(|&l| !self.mesh.cell(l).has_corner(v))
            .ok_or_else(|| PlateError::Internal(format!("vertex {v:?} is neither basis vertex nor T-junction")))?;
        let ext = self.cell_ordinates(big, cell_memo, vertex_memo)?;
        let r = self.mesh.param_rect(big);
        let (hx, hy) = (r[1] - r[0], r[3] - r[2]);
        let (px, py) = self.mesh.to_param(v);
        let (s, t) = ((px - r[0]) / hx, (py - r[2]) / hy);
        let form: DataForm = ext.iter().map(|(b, o)| (*b, bezier_hermite(o, s, t, hx, hy))).collect();
        vertex_memo.insert(v, form.clone());
        Ok(form)
    }

    pub fn num_basis(&self) -> usize {
        4 * self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_of_cell(&self, cell: usize) -> Option<usize> {
        self.element_of_cell.get(&cell).copied()
    }

    pub fn vertex_of(&self, v: (i64, i64)) -> Option<usize> {
        self.vertex_index.get(&v).copied()
    }

    pub fn element_rect(&self, e: usize) -> [f64; 4] {
        self.mesh.param_rect(self.elements[e])
    }

    /// Nonzero basis values and parametric gradients at a parametric point inside element `e`.
    pub fn eval(&self, e: usize, xi: f64, eta: f64, out: &mut Vec<BasisValue>) {
        let r = self.element_rect(e);
        let (hx, hy) = (r[1] - r[0], r[3] - r[2]);
        let (s, t) = ((xi - r[0]) / hx, (eta - r[2]) / hy);
        let (bs, ds) = bernstein3(s);
        let (bt, dt) = bernstein3(t);
        let mut v16 = [0.0; 16];
        let mut x16 = [0.0; 16];
        let mut y16 = [0.0; 16];
        for j in 0..4 {
            for i in 0..4 {
                v16[i + 4 * j] = bs[i] * bt[j];
                x16[i + 4 * j] = ds[i] * bt[j] / hx;
                y16[i + 4 * j] = bs[i] * dt[j] / hy;
            }
        }
        out.clear();
        for (b, o) in &self.extraction[e] {
            let (mut v, mut dx, mut dy) = (0.0, 0.0, 0.0);
            for k in 0..16 {
                v += o[k] * v16[k];
                dx += o[k] * x16[k];
                dy += o[k] * y16[k];
            }
            out.push(BasisValue { index: *b, value: v, d_xi: dx, d_eta: dy });
        }
    }

    /// Evaluation on a leaf cell in reference coordinates [-1,1]^2.
    pub fn eval_pht(&self, cell: usize, xi_hat: f64, eta_hat: f64) -> Result<Vec<BasisValue>> {
        let e = self
            .element_of_cell(cell)
            .ok_or_else(|| PlateError::Argument(format!("cell {cell} is not a leaf")))?;
        if !(-1.0..=1.0).contains(&xi_hat) || !(-1.0..=1.0).contains(&eta_hat) {
            return Err(PlateError::Argument("reference coordinates outside [-1,1]".into()));
        }
        let r = self.element_rect(e);
        let xi = r[0] + 0.5 * (xi_hat + 1.0) * (r[1] - r[0]);
        let eta = r[2] + 0.5 * (eta_hat + 1.0) * (r[3] - r[2]);
        let mut out = Vec::new();
        self.eval(e, xi, eta, &mut out);
        Ok(out)
    }

    /// Element containing a parametric point.
    pub fn locate(&self, xi: f64, eta: f64) -> usize {
        self.element_of_cell[&self.mesh.locate(xi, eta)]
    }

    /// Hermite data (f, f_xi, f_eta, f_xi_eta) of the spline with `coeffs` at a mesh position.
    pub fn hermite_at(&self, coeffs: &[f64], v: (i64, i64)) -> [f64; 4] {
        let (sx, sy) = (if v.0 >= self.mesh.width() { -1 } else { 1 }, if v.1 >= self.mesh.height() { -1 } else { 1 });
        let cell = self.mesh.leaf_at(v.0, v.1, sx, sy).expect("position in domain");
        let e = self.element_of_cell[&cell];
        let r = self.element_rect(e);
        let (hx, hy) = (r[1] - r[0], r[3] - r[2]);
        let (px, py) = self.mesh.to_param(v);
        let (s, t) = ((px - r[0]) / hx, (py - r[2]) / hy);
        let mut b = [0.0; 16];
        for (i, o) in &self.extraction[e] {
            for k in 0..16 {
                b[k] += coeffs[*i] * o[k];
            }
        }
        bezier_hermite(&b, s, t, hx, hy)
    }

    /// Functions with a nonzero trace on a patch edge, keyed for interface matching.
    pub fn edge_trace(&self, edge: Edge) -> Vec<(usize, TraceKey)> {
        let (w, h) = (self.mesh.width(), self.mesh.height());
        let mut out = Vec::new();
        for (vi, v) in self.vertices.iter().enumerate() {
            let (on, normal_ty, pos, len, tangential_is_x) = match edge {
                Edge::South => (v.y == 0, 0, v.x, w, true),
                Edge::North => (v.y == h, 1, v.x, w, true),
                Edge::West => (v.x == 0, 0, v.y, h, false),
                Edge::East => (v.x == w, 1, v.y, h, false),
            };
            if !on {
                continue;
            }
            for tt in 0..2 {
                let k = if tangential_is_x { tt + 2 * normal_ty } else { normal_ty + 2 * tt };
                out.push((4 * vi + k, TraceKey { pos, len, ty: if tt == 0 { -1 } else { 1 } }));
            }
        }
        out
    }

    /// Level-0 cell counts, needed to match interface parametrizations.
    pub fn level0(&self) -> (usize, usize) {
        (self.mesh.nx, self.mesh.ny)
    }
}

/// Coefficients of a vertex's four functions reproducing the given Hermite data.
pub fn hermite_solve(herm: &[[f64; 4]; 4], data: &[f64; 4]) -> [f64; 4] {
    let mut m = [[0.0; 5]; 4];
    for r in 0..4 {
        for k in 0..4 {
            m[r][k] = herm[k][r];
        }
        m[r][4] = data[r];
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..5 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    [m[0][4] / m[0][0], m[1][4] / m[1][1], m[2][4] / m[2][2], m[3][4] / m[3][3]]
}

/// Exact representation of a coarse spline on a nested refined space (old coefficients kept,
/// new vertex coefficients solved from the coarse Hermite data).
pub fn prolong_hierarchical(coarse: &PhtSpace, fine: &PhtSpace, coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != coarse.num_basis() {
        return Err(PlateError::Argument(format!(
            "coefficient length {} does not match coarse dimension {}",
            coeffs.len(),
            coarse.num_basis()
        )));
    }
    if coarse.mesh.nx != fine.mesh.nx || coarse.mesh.ny != fine.mesh.ny {
        return Err(PlateError::Argument("meshes do not share a level-0 grid".into()));
    }
    let mut out = vec![0.0; fine.num_basis()];
    for (vi, v) in fine.vertices.iter().enumerate() {
        let c = match coarse.vertex_of((v.x, v.y)) {
            Some(cv) => [coeffs[4 * cv], coeffs[4 * cv + 1], coeffs[4 * cv + 2], coeffs[4 * cv + 3]],
            None => hermite_solve(&v.hermite, &coarse.hermite_at(coeffs, (v.x, v.y))),
        };
        out[4 * vi..4 * vi + 4].copy_from_slice(&c);
    }
    for v in &coarse.vertices {
        if fine.vertex_of((v.x, v.y)).is_none() {
            return Err(PlateError::Argument("fine mesh is not nested in the coarse mesh".into()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{bspline_derivs, KnotVector};
    use rand::{Rng, SeedableRng};

    fn tensor_values(kv: &KnotVector, x: f64) -> Vec<(usize, f64, f64)> {
        let (s, d) = bspline_derivs(kv, x, 1).unwrap();
        (0..4).map(|a| (s - 3 + a, d[0][a], d[1][a])).collect()
    }

    fn random_mesh(seed: u64, steps: usize) -> HierTMesh {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = HierTMesh::new(rng.random_range(1..3), rng.random_range(1..3)).unwrap();
        for _ in 0..steps {
            let leaves = m.leaves();
            let k = rng.random_range(1..=leaves.len().min(3));
            let pick: Vec<usize> = (0..k).map(|_| leaves[rng.random_range(0..leaves.len())]).collect();
            m.refine(&pick).unwrap();
        }
        m
    }

    #[test]
    fn level0_matches_tensor_bsplines() {
        let m = HierTMesh::new(2, 2).unwrap();
        let sp = PhtSpace::new(&m).unwrap();
        assert_eq!(sp.num_basis(), 36);
        let kv = KnotVector::uniform(3, 2, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(f64, f64)> = (0..40).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        // Column of sampled values per PHT function and per tensor function.
        let mut pht_cols = vec![vec![0.0; pts.len()]; 36];
        let mut ten_cols = vec![vec![0.0; pts.len()]; 36];
        let mut buf = Vec::new();
        for (p, &(x, y)) in pts.iter().enumerate() {
            sp.eval(sp.locate(x, y), x, y, &mut buf);
            for bv in &buf {
                pht_cols[bv.index][p] = bv.value;
            }
            for (i, vi, _) in tensor_values(&kv, x) {
                for (j, vj, _) in tensor_values(&kv, y) {
                    ten_cols[i + 6 * j][p] = vi * vj;
                }
            }
        }
        for col in &pht_cols {
            let hit = ten_cols.iter().any(|t| t.iter().zip(col).all(|(a, b)| (a - b).abs() < 1e-13));
            assert!(hit, "PHT function not found among tensor B-splines");
        }
    }

    #[test]
    fn ordinate_partition_of_unity_and_idempotence() {
        for seed in 0..20 {
            let m = random_mesh(seed, 4);
            let mut sp = PhtSpace::new(&m).unwrap();
            assert_eq!(sp.num_basis(), m.dimension());
            for ext in &sp.extraction {
                for k in 0..16 {
                    let s: f64 = ext.iter().map(|(_, o)| o[k]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
            let before = sp.extraction.clone();
            sp.compute_bezier_ordinates().unwrap();
            assert_eq!(before, sp.extraction);
        }
    }

    #[test]
    fn c1_across_interior_edges() {
        let m = random_mesh(3, 5);
        let sp = PhtSpace::new(&m).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let coeffs: Vec<f64> = (0..sp.num_basis()).map(|_| rng.random::<f64>() - 0.5).collect();
        let field = |e: usize, x: f64, y: f64| {
            let mut b = Vec::new();
            sp.eval(e, x, y, &mut b);
            b.iter().fold([0.0; 3], |a, v| {
                [a[0] + coeffs[v.index] * v.value, a[1] + coeffs[v.index] * v.d_xi, a[2] + coeffs[v.index] * v.d_eta]
            })
        };
        let mut checked = 0;
        for (e, &cell) in sp.elements.iter().enumerate() {
            let r = sp.element_rect(e);
            if r[1] >= 1.0 {
                continue;
            }
            let _ = cell;
            for k in 1..10 {
                let y = r[2] + (r[3] - r[2]) * k as f64 / 10.0;
                let other = sp.locate(r[1] + 1e-12, y);
                let a = field(e, r[1], y);
                let b = field(other, r[1], y);
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() < 1e-10 * (1.0 + a[c].abs()));
                }
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn prolongation_reproduces_coarse_function() {
        let coarse_mesh = random_mesh(5, 3);
        let coarse = PhtSpace::new(&coarse_mesh).unwrap();
        let mut fine_mesh = coarse_mesh.clone();
        let leaves = fine_mesh.leaves();
        fine_mesh.refine(&leaves[..leaves.len() / 2]).unwrap();
        fine_mesh.refine_uniform();
        let fine = PhtSpace::new(&fine_mesh).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let c: Vec<f64> = (0..coarse.num_basis()).map(|_| rng.random::<f64>()).collect();
        let f = prolong_hierarchical(&coarse, &fine, &c).unwrap();
        let mut b = Vec::new();
        for _ in 0..200 {
            let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
            coarse.eval(coarse.locate(x, y), x, y, &mut b);
            let vc: f64 = b.iter().map(|v| c[v.index] * v.value).sum();
            fine.eval(fine.locate(x, y), x, y, &mut b);
            let vf: f64 = b.iter().map(|v| f[v.index] * v.value).sum();
            assert!((vc - vf).abs() < 1e-10);
        }
    }

    #[test]
    fn reference_evaluation_rejects_non_leaf() {
        let mut m = HierTMesh::new(1, 1).unwrap();
        m.refine(&[0]).unwrap();
        let sp = PhtSpace::new(&m).unwrap();
        assert!(sp.eval_pht(0, 0.0, 0.0).is_err());
        let v = sp.eval_pht(sp.elements[0], 0.3, -0.2).unwrap();
        assert!((v.iter().map(|b| b.value).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
