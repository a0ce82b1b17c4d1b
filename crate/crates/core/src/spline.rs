//! Univariate B-spline bases, tensor NURBS patches, the geometry map and benchmark geometries.

use crate::error::{PlateError, Result};
use serde::{Deserialize, Serialize};

/// Open knot vector with its degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub degree: usize,
    pub values: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, values: Vec<f64>) -> Result<Self> {
        let kv = KnotVector { degree, values };
        kv.validate()?;
        Ok(kv)
    }

    /// Open uniform knot vector on [0,1] with `n_el` elements and interior multiplicity `mult`.
    pub fn uniform(degree: usize, n_el: usize, mult: usize) -> Self {
        let mut values = vec![0.0; degree + 1];
        for e in 1..n_el {
            let t = e as f64 / n_el as f64;
            values.extend(std::iter::repeat_n(t, mult));
        }
        values.extend(std::iter::repeat_n(1.0, degree + 1));
        KnotVector { degree, values }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.degree;
        let v = &self.values;
        if v.len() < 2 * (p + 1) {
            return Err(PlateError::InvalidGeometry(format!(
                "knot vector of degree {p} needs at least {} values, got {}",
                2 * (p + 1),
                v.len()
            )));
        }
        if v.windows(2).any(|w| w[1] < w[0]) {
            return Err(PlateError::InvalidGeometry("knot vector is decreasing".into()));
        }
        let first = v[0];
        let last = v[v.len() - 1];
        if v[..=p].iter().any(|&x| x != first) || v[v.len() - p - 1..].iter().any(|&x| x != last) {
            return Err(PlateError::InvalidGeometry("knot vector is not open".into()));
        }
        if last <= first {
            return Err(PlateError::InvalidGeometry("knot vector has zero length".into()));
        }
        let mut i = 0;
        while i < v.len() {
            let mut j = i;
            while j < v.len() && v[j] == v[i] {
                j += 1;
            }
            if j - i > p + 1 {
                return Err(PlateError::InvalidGeometry(format!(
                    "knot {} has multiplicity {} > p+1",
                    v[i],
                    j - i
                )));
            }
            i = j;
        }
        Ok(())
    }

    /// Number of basis functions.
    pub fn num_basis(&self) -> usize {
        self.values.len() - self.degree - 1
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Distinct knot values (element boundaries).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &x in &self.values {
            if out.last() != Some(&x) {
                out.push(x);
            }
        }
        out
    }

    /// Index `s` with `values[s] <= xi < values[s+1]`, using the last non-empty span at the right end.
    pub fn find_span(&self, xi: f64) -> Result<usize> {
        let (lo, hi) = (self.first(), self.last());
        if !(xi >= lo && xi <= hi) {
            return Err(PlateError::Domain { value: xi, lo, hi });
        }
        let n = self.num_basis();
        let v = &self.values;
        if xi >= v[n] {
            let mut s = n - 1;
            while v[s] == v[s + 1] {
                s -= 1;
            }
            return Ok(s);
        }
        let (mut low, mut high) = (self.degree, n);
        let mut mid = (low + high) / 2;
        while xi < v[mid] || xi >= v[mid + 1] {
            if xi < v[mid] {
                high = mid;
            } else {
                low = mid;
            }
            mid = (low + high) / 2;
        }
        Ok(mid)
    }
}

/// Nonzero basis values at `xi`: returns the span index and the p+1 values of functions span-p..=span.
pub fn bspline_basis(knots: &KnotVector, xi: f64) -> Result<(usize, Vec<f64>)> {
    let (span, d) = bspline_derivs(knots, xi, 0)?;
    Ok((span, d.into_iter().next().unwrap()))
}

/// Nonzero basis values and derivatives up to `order`; row k holds the k-th derivatives.
pub fn bspline_derivs(knots: &KnotVector, xi: f64, order: usize) -> Result<(usize, Vec<Vec<f64>>)> {
    let p = knots.degree;
    if order > p {
        return Err(PlateError::Argument(format!("derivative order {order} exceeds degree {p}")));
    }
    let span = knots.find_span(xi)?;
    let u = &knots.values;
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = xi - u[span + 1 - j];
        right[j] = u[span + j] - xi;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; order + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=order {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = p as f64;
    for k in 1..=order {
        for v in ders[k].iter_mut() {
            *v *= fac;
        }
        fac *= (p - k) as f64;
    }
    Ok((span, ders))
}

/// Cubic Bernstein values and first derivatives on [0,1].
#[inline]
pub fn bernstein3(t: f64) -> ([f64; 4], [f64; 4]) {
    let s = 1.0 - t;
    (
        [s * s * s, 3.0 * t * s * s, 3.0 * t * t * s, t * t * t],
        [-3.0 * s * s, 3.0 * s * s - 6.0 * t * s, 6.0 * t * s - 3.0 * t * t, 3.0 * t * t],
    )
}

/// Tensor-product NURBS surface. Control points and weights are stored with the u index fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub knots_u: KnotVector,
    pub knots_v: KnotVector,
    pub control_points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Point, Jacobian `jac[r][c] = d x_r / d xi_c` and its determinant.
#[derive(Clone, Copy, Debug)]
pub struct GeomSample {
    pub point: [f64; 2],
    pub jacobian: [[f64; 2]; 2],
    pub jac_det: f64,
}

/// One nonzero rational basis function value with parametric gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisValue {
    pub index: usize,
    pub value: f64,
    pub d_xi: f64,
    pub d_eta: f64,
}

impl PatchGeometry {
    pub fn new(knots_u: KnotVector, knots_v: KnotVector, control_points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Self> {
        let g = PatchGeometry { knots_u, knots_v, control_points, weights };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.knots_u.validate()?;
        self.knots_v.validate()?;
        for kv in [&self.knots_u, &self.knots_v] {
            if kv.first() != 0.0 || kv.last() != 1.0 {
                return Err(PlateError::InvalidGeometry("patch knot vectors must span [0,1]".into()));
            }
        }
        let n = self.knots_u.num_basis() * self.knots_v.num_basis();
        if self.control_points.len() != n || self.weights.len() != n {
            return Err(PlateError::InvalidGeometry(format!(
                "expected {n} control points and weights, got {} and {}",
                self.control_points.len(),
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0)) {
            return Err(PlateError::InvalidGeometry(format!("non-positive weight {w}")));
        }
        Ok(())
    }

    pub fn n_u(&self) -> usize {
        self.knots_u.num_basis()
    }

    pub fn n_v(&self) -> usize {
        self.knots_v.num_basis()
    }

    /// Weight function W and its parametric gradient.
    pub fn weight_function(&self, xi: f64, eta: f64) -> Result<(f64, [f64; 2])> {
        let (su, du) = bspline_derivs(&self.knots_u, xi, 1)?;
        let (sv, dv) = bspline_derivs(&self.knots_v, eta, 1)?;
        let (p, q, nu) = (self.knots_u.degree, self.knots_v.degree, self.n_u());
        let (mut w, mut wx, mut wy) = (0.0, 0.0, 0.0);
        for b in 0..=q {
            for a in 0..=p {
                let k = (su - p + a) + nu * (sv - q + b);
                let wk = self.weights[k];
                w += du[0][a] * dv[0][b] * wk;
                wx += du[1][a] * dv[0][b] * wk;
                wy += du[0][a] * dv[1][b] * wk;
            }
        }
        Ok((w, [wx, wy]))
    }

    /// Nonzero rational basis values and parametric first derivatives.
    pub fn nurbs_basis(&self, xi: f64, eta: f64) -> Result<Vec<BasisValue>> {
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0)) {
            return Err(PlateError::InvalidGeometry(format!("non-positive weight {w}")));
        }
        let (su, du) = bspline_derivs(&self.knots_u, xi, 1)?;
        let (sv, dv) = bspline_derivs(&self.knots_v, eta, 1)?;
        let (p, q, nu) = (self.knots_u.degree, self.knots_v.degree, self.n_u());
        let mut out = Vec::with_capacity((p + 1) * (q + 1));
        let (mut w, mut wx, mut wy) = (0.0, 0.0, 0.0);
        for b in 0..=q {
            for a in 0..=p {
                let k = (su - p + a) + nu * (sv - q + b);
                let wk = self.weights[k];
                let v = du[0][a] * dv[0][b] * wk;
                let vx = du[1][a] * dv[0][b] * wk;
                let vy = du[0][a] * dv[1][b] * wk;
                w += v;
                wx += vx;
                wy += vy;
                out.push(BasisValue { index: k, value: v, d_xi: vx, d_eta: vy });
            }
        }
        for bv in out.iter_mut() {
            let r = bv.value / w;
            bv.d_xi = (bv.d_xi - r * wx) / w;
            bv.d_eta = (bv.d_eta - r * wy) / w;
            bv.value = r;
        }
        Ok(out)
    }

    /// Point and Jacobian without the singularity check.
    pub fn eval(&self, xi: f64, eta: f64) -> Result<GeomSample> {
        let basis = self.nurbs_basis(xi, eta)?;
        let mut x = [0.0; 2];
        let mut j = [[0.0; 2]; 2];
        for bv in &basis {
            let p = self.control_points[bv.index];
            for r in 0..2 {
                x[r] += bv.value * p[r];
                j[r][0] += bv.d_xi * p[r];
                j[r][1] += bv.d_eta * p[r];
            }
        }
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        Ok(GeomSample { point: x, jacobian: j, jac_det: det })
    }

    /// Control point indices along a patch edge, ordered by increasing edge parameter.
    pub fn edge_control_indices(&self, edge: Edge) -> Vec<usize> {
        let (nu, nv) = (self.n_u(), self.n_v());
        match edge {
            Edge::South => (0..nu).collect(),
            Edge::North => (0..nu).map(|i| i + nu * (nv - 1)).collect(),
            Edge::West => (0..nv).map(|j| nu * j).collect(),
            Edge::East => (0..nv).map(|j| nu - 1 + nu * j).collect(),
        }
    }
}

/// The geometry map F. Fails where the Jacobian degenerates.
pub fn map_geometry(patch: &PatchGeometry, xi: f64, eta: f64) -> Result<GeomSample> {
    let g = patch.eval(xi, eta)?;
    if g.jac_det.abs() < 1e-14 {
        return Err(PlateError::SingularMap { xi, eta, det: g.jac_det });
    }
    Ok(g)
}

/// Patch edges in the parametric square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    /// eta = 0
    South,
    /// xi = 1
    East,
    /// eta = 1
    North,
    /// xi = 0
    West,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::South, Edge::East, Edge::North, Edge::West];

    /// Parametric point on the edge at edge parameter t (increasing with xi or eta).
    pub fn point(self, t: f64) -> (f64, f64) {
        match self {
            Edge::South => (t, 0.0),
            Edge::North => (t, 1.0),
            Edge::West => (0.0, t),
            Edge::East => (1.0, t),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Edge::South => "south",
            Edge::East => "east",
            Edge::North => "north",
            Edge::West => "west",
        }
    }
}

/// A shared edge between two patches; `reversed` when the edge parameters run in opposite directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    pub patch_a: usize,
    pub edge_a: Edge,
    pub patch_b: usize,
    pub edge_b: Edge,
    pub reversed: bool,
}

/// Finds patch pairs whose edges carry identical control points and weights.
pub fn detect_interfaces(patches: &[PatchGeometry]) -> Vec<Interface> {
    let same = |a: &PatchGeometry, ia: &[usize], b: &PatchGeometry, ib: &[usize]| {
        ia.len() == ib.len()
            && ia.iter().zip(ib).all(|(&x, &y)| {
                let (p, q) = (a.control_points[x], b.control_points[y]);
                (p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12 && (a.weights[x] - b.weights[y]).abs() < 1e-12
            })
    };
    let mut out = Vec::new();
    for a in 0..patches.len() {
        for b in a + 1..patches.len() {
            for ea in Edge::ALL {
                for eb in Edge::ALL {
                    let ia = patches[a].edge_control_indices(ea);
                    let ib = patches[b].edge_control_indices(eb);
                    let kva = if matches!(ea, Edge::South | Edge::North) { &patches[a].knots_u } else { &patches[a].knots_v };
                    let kvb = if matches!(eb, Edge::South | Edge::North) { &patches[b].knots_u } else { &patches[b].knots_v };
                    if same(&patches[a], &ia, &patches[b], &ib) && kva == kvb {
                        out.push(Interface { patch_a: a, edge_a: ea, patch_b: b, edge_b: eb, reversed: false });
                    } else {
                        let rb: Vec<usize> = ib.iter().rev().copied().collect();
                        let rev_knots: Vec<f64> = kvb.values.iter().rev().map(|x| 1.0 - x).collect();
                        if same(&patches[a], &ia, &patches[b], &rb) && kva.values == rev_knots {
                            out.push(Interface { patch_a: a, edge_a: ea, patch_b: b, edge_b: eb, reversed: true });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Bilinear patch with the given corners (sw, se, nw, ne).
pub fn bilinear_patch(corners: [[f64; 2]; 4]) -> PatchGeometry {
    PatchGeometry {
        knots_u: KnotVector::uniform(1, 1, 1),
        knots_v: KnotVector::uniform(1, 1, 1),
        control_points: corners.to_vec(),
        weights: vec![1.0; 4],
    }
}

/// Single-patch disk of radius r: four 90-degree rational quadratic arcs on the boundary.
pub fn disk_single_patch(r: f64) -> PatchGeometry {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let t = std::f64::consts::SQRT_2;
    let pts = [
        [-s, -s], [0.0, -t], [s, -s],
        [-t, 0.0], [0.0, 0.0], [t, 0.0],
        [-s, s], [0.0, t], [s, s],
    ];
    PatchGeometry {
        knots_u: KnotVector::uniform(2, 1, 1),
        knots_v: KnotVector::uniform(2, 1, 1),
        control_points: pts.iter().map(|p| [p[0] * r, p[1] * r]).collect(),
        weights: vec![1.0, s, 1.0, s, 1.0, s, 1.0, s, 1.0],
    }
}

/// Five-patch disk: a rationally parametrized central square of half-width `a·r` and four ring patches.
pub fn disk_five_patch(r: f64, a: f64) -> Vec<PatchGeometry> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let t = std::f64::consts::SQRT_2;
    let a = a * r;
    let w3 = [1.0, s, 1.0];
    let center = PatchGeometry {
        knots_u: KnotVector::uniform(2, 1, 1),
        knots_v: KnotVector::uniform(2, 1, 1),
        control_points: vec![
            [-a, -a], [0.0, -a], [a, -a],
            [-a, 0.0], [0.0, 0.0], [a, 0.0],
            [-a, a], [0.0, a], [a, a],
        ],
        weights: (0..9).map(|k| w3[k % 3] * w3[k / 3]).collect(),
    };
    let arc = [[-s * r, -s * r], [0.0, -t * r], [s * r, -s * r]];
    let line = [[-a, -a], [0.0, -a], [a, -a]];
    let mut bottom = Vec::with_capacity(9);
    for p in arc {
        bottom.push(p);
    }
    for k in 0..3 {
        bottom.push([(arc[k][0] + line[k][0]) * 0.5, (arc[k][1] + line[k][1]) * 0.5]);
    }
    for p in line {
        bottom.push(p);
    }
    let ring_weights: Vec<f64> = (0..9).map(|k| w3[k % 3]).collect();
    let mut out = vec![center];
    for quarter in 0..4 {
        let (c, sn) = match quarter {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        out.push(PatchGeometry {
            knots_u: KnotVector::uniform(2, 1, 1),
            knots_v: KnotVector::uniform(2, 1, 1),
            control_points: bottom.iter().map(|p| [c * p[0] - sn * p[1], sn * p[0] + c * p[1]]).collect(),
            weights: ring_weights.clone(),
        });
    }
    out
}

/// Rectangle [0,lx]x[0,ly] split into nx by ny bilinear patches, row-major from the south-west.
pub fn rectangle_patches(lx: f64, ly: f64, nx: usize, ny: usize) -> Vec<PatchGeometry> {
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x0, x1) = (lx * i as f64 / nx as f64, lx * (i + 1) as f64 / nx as f64);
            let (y0, y1) = (ly * j as f64 / ny as f64, ly * (j + 1) as f64 / ny as f64);
            out.push(bilinear_patch([[x0, y0], [x1, y0], [x0, y1], [x1, y1]]));
        }
    }
    out
}

/// Benchmark geometry parameters.
#[derive(Clone, Debug)]
pub enum BenchmarkParams {
    /// radius and patch count (1 or 5)
    Disk { radius: f64, patches: usize },
    /// side lengths and patch grid
    Square { lx: f64, ly: f64, nx: usize, ny: usize },
    /// side length; a 3x3 patch grid whose centre patch is the inclusion
    HetSquare { side: f64 },
}

/// Builds a named benchmark geometry: `disk`, `square` or `het_square`.
pub fn build_benchmark_geometry(name: &str, params: &BenchmarkParams) -> Result<Vec<PatchGeometry>> {
    match (name, params) {
        ("disk", BenchmarkParams::Disk { radius, patches }) => match patches {
            1 => Ok(vec![disk_single_patch(*radius)]),
            5 => Ok(disk_five_patch(*radius, 0.4)),
            n => Err(PlateError::Argument(format!("disk supports 1 or 5 patches, got {n}"))),
        },
        ("square", BenchmarkParams::Square { lx, ly, nx, ny }) => Ok(rectangle_patches(*lx, *ly, *nx, *ny)),
        ("het_square", BenchmarkParams::HetSquare { side }) => Ok(rectangle_patches(*side, *side, 3, 3)),
        ("disk" | "square" | "het_square", _) => Err(PlateError::Argument(format!("parameters do not match geometry '{name}'"))),
        _ => Err(PlateError::Argument(format!("unknown benchmark geometry '{name}'"))),
    }
}

/// Degree elevation of a single-element (Bezier) patch from degree 2 to degree 3 in both directions.
pub fn elevate_bezier_2_to_3(g: &PatchGeometry) -> Result<PatchGeometry> {
    if g.knots_u.degree != 2 || g.knots_v.degree != 2 || g.n_u() != 3 || g.n_v() != 3 {
        return Err(PlateError::Unsupported("degree elevation needs a single-element biquadratic patch".into()));
    }
    let hom: Vec<[f64; 3]> = g
        .control_points
        .iter()
        .zip(&g.weights)
        .map(|(p, w)| [p[0] * w, p[1] * w, *w])
        .collect();
    let elev = |c: &[[f64; 3]; 3]| -> [[f64; 3]; 4] {
        let mut o = [[0.0; 3]; 4];
        for (i, oi) in o.iter_mut().enumerate() {
            let a = i as f64 / 3.0;
            for d in 0..3 {
                let lo = if i > 0 { c[i - 1][d] } else { 0.0 };
                let hi = if i < 3 { c[i][d] } else { 0.0 };
                oi[d] = a * lo + (1.0 - a) * hi;
            }
        }
        o
    };
    let mut rows = [[[0.0; 3]; 4]; 3];
    for (j, row) in rows.iter_mut().enumerate() {
        *row = elev(&[hom[3 * j], hom[3 * j + 1], hom[3 * j + 2]]);
    }
    let mut out_hom = vec![[0.0; 3]; 16];
    for i in 0..4 {
        let col = elev(&[rows[0][i], rows[1][i], rows[2][i]]);
        for (j, c) in col.iter().enumerate() {
            out_hom[i + 4 * j] = *c;
        }
    }
    PatchGeometry::new(
        KnotVector::uniform(3, 1, 1),
        KnotVector::uniform(3, 1, 1),
        out_hom.iter().map(|h| [h[0] / h[2], h[1] / h[2]]).collect(),
        out_hom.iter().map(|h| h[2]).collect(),
    )
}
