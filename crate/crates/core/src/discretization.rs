//! Solution spaces per patch: PHT (GIFT), tensor cubic B-splines, and rational wrappers (IGA).

use crate::error::{PlateError, Result};
use crate::pht::rht::{check_weights, rationalize};
use crate::pht::{HierTMesh, PhtSpace, TraceKey};
use crate::spline::{bspline_derivs, BasisValue, Edge, KnotVector, PatchGeometry};

/// Tensor-product B-spline space on one patch.
#[derive(Clone, Debug)]
pub struct TensorSpace {
    pub ku: KnotVector,
    pub kv: KnotVector,
    bu: Vec<f64>,
    bv: Vec<f64>,
}

impl TensorSpace {
    pub fn new(ku: KnotVector, kv: KnotVector) -> Result<Self> {
        ku.validate()?;
        kv.validate()?;
        let (bu, bv) = (ku.breakpoints(), kv.breakpoints());
        Ok(TensorSpace { ku, kv, bu, bv })
    }

    pub fn num_basis(&self) -> usize {
        self.ku.num_basis() * self.kv.num_basis()
    }

    pub fn num_elements(&self) -> usize {
        (self.bu.len() - 1) * (self.bv.len() - 1)
    }

    pub fn element_rect(&self, e: usize) -> [f64; 4] {
        let n = self.bu.len() - 1;
        let (i, j) = (e % n, e / n);
        [self.bu[i], self.bu[i + 1], self.bv[j], self.bv[j + 1]]
    }

    pub fn eval(&self, xi: f64, eta: f64, out: &mut Vec<BasisValue>) {
        let (su, du) = bspline_derivs(&self.ku, xi, 1).expect("point in domain");
        let (sv, dv) = bspline_derivs(&self.kv, eta, 1).expect("point in domain");
        let (p, q, nu) = (self.ku.degree, self.kv.degree, self.ku.num_basis());
        out.clear();
        for b in 0..=q {
            for a in 0..=p {
                out.push(BasisValue {
                    index: (su - p + a) + nu * (sv - q + b),
                    value: du[0][a] * dv[0][b],
                    d_xi: du[1][a] * dv[0][b],
                    d_eta: du[0][a] * dv[1][b],
                });
            }
        }
    }

    pub fn locate(&self, xi: f64, eta: f64) -> usize {
        let find = |b: &[f64], x: f64| {
            let k = b.partition_point(|&t| t <= x);
            k.clamp(1, b.len() - 1) - 1
        };
        find(&self.bu, xi) + (self.bu.len() - 1) * find(&self.bv, eta)
    }

    pub fn edge_trace(&self, edge: Edge) -> Vec<(usize, TraceKey)> {
        let (nu, nv) = (self.ku.num_basis(), self.kv.num_basis());
        let idx: Vec<usize> = match edge {
            Edge::South => (0..nu).collect(),
            Edge::North => (0..nu).map(|i| i + nu * (nv - 1)).collect(),
            Edge::West => (0..nv).map(|j| nu * j).collect(),
            Edge::East => (0..nv).map(|j| nu - 1 + nu * j).collect(),
        };
        let len = idx.len() as i64 - 1;
        idx.into_iter().enumerate().map(|(t, i)| (i, TraceKey { pos: t as i64, len, ty: 0 })).collect()
    }
}

/// Solution space of one patch.
#[derive(Clone, Debug)]
pub enum SolutionSpace {
    Pht(PhtSpace),
    Tensor(TensorSpace),
    /// R_i = N_i w_i / sum_j N_j w_j over an inner polynomial space.
    Rational { inner: Box<SolutionSpace>, weights: Vec<f64> },
}

impl SolutionSpace {
    pub fn rational(inner: SolutionSpace, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        if weights.len() != inner.num_basis() {
            return Err(PlateError::Argument("weight count does not match the basis".into()));
        }
        Ok(SolutionSpace::Rational { inner: Box::new(inner), weights })
    }

    pub fn num_basis(&self) -> usize {
        match self {
            SolutionSpace::Pht(s) => s.num_basis(),
            SolutionSpace::Tensor(s) => s.num_basis(),
            SolutionSpace::Rational { inner, .. } => inner.num_basis(),
        }
    }

    pub fn num_elements(&self) -> usize {
        match self {
            SolutionSpace::Pht(s) => s.num_elements(),
            SolutionSpace::Tensor(s) => s.num_elements(),
            SolutionSpace::Rational { inner, .. } => inner.num_elements(),
        }
    }

    pub fn element_rect(&self, e: usize) -> [f64; 4] {
        match self {
            SolutionSpace::Pht(s) => s.element_rect(e),
            SolutionSpace::Tensor(s) => s.element_rect(e),
            SolutionSpace::Rational { inner, .. } => inner.element_rect(e),
        }
    }

    /// Cell id reported for element `e` (leaf id for PHT meshes).
    pub fn element_id(&self, e: usize) -> usize {
        match self {
            SolutionSpace::Pht(s) => s.elements[e],
            SolutionSpace::Tensor(_) => e,
            SolutionSpace::Rational { inner, .. } => inner.element_id(e),
        }
    }

    /// Nonzero basis values at a parametric point of element `e`.
    pub fn eval(&self, e: usize, xi: f64, eta: f64, out: &mut Vec<BasisValue>) {
        match self {
            SolutionSpace::Pht(s) => s.eval(e, xi, eta, out),
            SolutionSpace::Tensor(s) => s.eval(xi, eta, out),
            SolutionSpace::Rational { inner, weights } => {
                inner.eval(e, xi, eta, out);
                rationalize(out, weights);
            }
        }
    }

    pub fn locate(&self, xi: f64, eta: f64) -> usize {
        match self {
            SolutionSpace::Pht(s) => s.locate(xi, eta),
            SolutionSpace::Tensor(s) => s.locate(xi, eta),
            SolutionSpace::Rational { inner, .. } => inner.locate(xi, eta),
        }
    }

    pub fn edge_trace(&self, edge: Edge) -> Vec<(usize, TraceKey)> {
        match self {
            SolutionSpace::Pht(s) => s.edge_trace(edge),
            SolutionSpace::Tensor(s) => s.edge_trace(edge),
            SolutionSpace::Rational { inner, .. } => inner.edge_trace(edge),
        }
    }

    /// The underlying PHT space, if any.
    pub fn pht(&self) -> Option<&PhtSpace> {
        match self {
            SolutionSpace::Pht(s) => Some(s),
            SolutionSpace::Rational { inner, .. } => inner.pht(),
            SolutionSpace::Tensor(_) => None,
        }
    }

    pub fn mesh(&self) -> Option<&HierTMesh> {
        self.pht().map(|s| &s.mesh)
    }

    /// Value of a scalar field with the given coefficients at a parametric point.
    pub fn field_value(&self, coeffs: &[f64], xi: f64, eta: f64) -> [f64; 3] {
        let mut b = Vec::new();
        self.eval(self.locate(xi, eta), xi, eta, &mut b);
        b.iter().fold([0.0; 3], |a, v| {
            let c = coeffs[v.index];
            [a[0] + c * v.value, a[1] + c * v.d_xi, a[2] + c * v.d_eta]
        })
    }
}

/// Coefficients of a scalar function in a space by L2 projection over the parametric square.
/// Exact when the function lies in the space.
pub fn l2_project(space: &SolutionSpace, f: &dyn Fn(f64, f64) -> f64, order: usize) -> Result<Vec<f64>> {
    use faer::sparse::{SparseColMat, Triplet};
    use faer::linalg::solvers::Solve;
    let n = space.num_basis();
    let (qx, qw) = crate::quadrature::gauss_legendre_unit(order);
    let mut trip = Vec::new();
    let mut rhs = faer::Mat::<f64>::zeros(n, 1);
    let mut b = Vec::new();
    for e in 0..space.num_elements() {
        let r = space.element_rect(e);
        let (hx, hy) = (r[1] - r[0], r[3] - r[2]);
        for (a, &ta) in qx.iter().enumerate() {
            for (c, &tc) in qx.iter().enumerate() {
                let (x, y) = (r[0] + hx * ta, r[2] + hy * tc);
                let w = qw[a] * qw[c] * hx * hy;
                space.eval(e, x, y, &mut b);
                let fv = f(x, y);
                for u in &b {
                    rhs[(u.index, 0)] += w * fv * u.value;
                    for v in &b {
                        trip.push(Triplet::new(u.index, v.index, w * u.value * v.value));
                    }
                }
            }
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| PlateError::Numerical(format!("projection matrix: {e:?}")))?;
    let llt = m
        .sp_cholesky(faer::Side::Lower)
        .map_err(|e| PlateError::Numerical(format!("projection mass matrix not SPD: {e:?}")))?;
    llt.solve_in_place(rhs.as_mut());
    Ok((0..n).map(|i| rhs[(i, 0)]).collect())
}

/// IGA solution space with cubic B-splines on the given knots, rational through the geometry's
/// weight function: R_i = B_i w_i / W where W = sum_i B_i w_i is the geometry denominator.
pub fn iga_nurbs_space(geometry: &PatchGeometry, ku: KnotVector, kv: KnotVector) -> Result<SolutionSpace> {
    let t = SolutionSpace::Tensor(TensorSpace::new(ku, kv)?);
    let w = l2_project(&t, &|x, y| geometry.weight_function(x, y).map(|v| v.0).unwrap_or(f64::NAN), 6)?;
    SolutionSpace::rational(t, w)
}

/// IGA(RHT) space on a PHT mesh, with weights from the exact representation of the geometry's
/// weight function.
pub fn iga_rht_space(geometry: &PatchGeometry, mesh: &HierTMesh) -> Result<SolutionSpace> {
    let sp = SolutionSpace::Pht(PhtSpace::new(mesh)?);
    let w = l2_project(&sp, &|x, y| geometry.weight_function(x, y).map(|v| v.0).unwrap_or(f64::NAN), 6)?;
    SolutionSpace::rational(sp, w)
}

/// Field discretization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Geometry kept as given, cubic PHT fields.
    Gift,
    /// Cubic C2 rational tensor fields sharing the geometry weight function.
    IgaNurbs,
    /// Rational PHT fields sharing the geometry weight function.
    IgaRht,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Gift => "gift",
            Scheme::IgaNurbs => "iga_nurbs",
            Scheme::IgaRht => "iga_rht",
        }
    }
}

/// Elements per direction of a uniformly refined mesh, or an error for local refinement.
pub fn uniform_divisions(mesh: &HierTMesh) -> Result<(usize, usize)> {
    let leaves = mesh.leaves();
    let level = mesh.cell(leaves[0]).level;
    if leaves.iter().any(|&l| mesh.cell(l).level != level) {
        return Err(PlateError::Unsupported("tensor-product fields require a uniformly refined mesh".into()));
    }
    Ok((mesh.nx << level, mesh.ny << level))
}

/// Solution space of one patch for a scheme on the given mesh.
pub fn build_space(geometry: &PatchGeometry, scheme: Scheme, mesh: &HierTMesh) -> Result<SolutionSpace> {
    match scheme {
        Scheme::Gift => Ok(SolutionSpace::Pht(PhtSpace::new(mesh)?)),
        Scheme::IgaRht => iga_rht_space(geometry, mesh),
        Scheme::IgaNurbs => {
            let (nu, nv) = uniform_divisions(mesh)?;
            iga_nurbs_space(geometry, KnotVector::uniform(3, nu, 1), KnotVector::uniform(3, nv, 1))
        }
    }
}
