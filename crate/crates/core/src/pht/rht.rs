//! Rational PHT (RHT) basis and the homogeneous control-point update under refinement.

use super::space::{prolong_hierarchical, PhtSpace};
use crate::error::{PlateError, Result};
use crate::spline::BasisValue;

/// Rational values R_i = T_i w_i / sum_j T_j w_j and parametric gradients on a leaf, in reference
/// coordinates [-1,1]^2.
pub fn rht_eval(space: &PhtSpace, weights: &[f64], cell: usize, xi_hat: f64, eta_hat: f64) -> Result<Vec<BasisValue>> {
    check_weights(weights)?;
    let mut b = space.eval_pht(cell, xi_hat, eta_hat)?;
    rationalize(&mut b, weights);
    Ok(b)
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    match weights.iter().find(|w| !(**w > 0.0)) {
        Some(w) => Err(PlateError::InvalidGeometry(format!("non-positive weight {w}"))),
        None => Ok(()),
    }
}

/// Turns polynomial values into rational ones in place.
pub(crate) fn rationalize(b: &mut [BasisValue], weights: &[f64]) {
    let (mut w, mut wx, mut wy) = (0.0, 0.0, 0.0);
    for v in b.iter() {
        let wi = weights[v.index];
        w += v.value * wi;
        wx += v.d_xi * wi;
        wy += v.d_eta * wi;
    }
    for v in b.iter_mut() {
        let wi = weights[v.index];
        let r = v.value * wi / w;
        v.d_xi = (v.d_xi * wi - r * wx) / w;
        v.d_eta = (v.d_eta * wi - r * wy) / w;
        v.value = r;
    }
}

/// New controls and weights after refinement: lift to homogeneous coordinates (w x, w y, w),
/// prolong each component exactly, and project back.
pub fn rht_update_controls(
    before: &PhtSpace,
    after: &PhtSpace,
    controls: &[[f64; 2]],
    weights: &[f64],
) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    check_weights(weights)?;
    if controls.len() != before.num_basis() || weights.len() != before.num_basis() {
        return Err(PlateError::Argument("controls and weights must match the coarse basis".into()));
    }
    let wx: Vec<f64> = controls.iter().zip(weights).map(|(p, w)| p[0] * w).collect();
    let wy: Vec<f64> = controls.iter().zip(weights).map(|(p, w)| p[1] * w).collect();
    let nwx = prolong_hierarchical(before, after, &wx)?;
    let nwy = prolong_hierarchical(before, after, &wy)?;
    let nw = prolong_hierarchical(before, after, weights)?;
    if let Some(w) = nw.iter().find(|w| !(w.abs() > 1e-300)) {
        return Err(PlateError::InvalidGeometry(format!("weight {w} after update")));
    }
    let pts = nwx.iter().zip(&nwy).zip(&nw).map(|((x, y), w)| [x / w, y / w]).collect();
    Ok((pts, nw))
}

/// Surface point of an RHT patch at a parametric point.
pub fn rht_point(space: &PhtSpace, controls: &[[f64; 2]], weights: &[f64], xi: f64, eta: f64) -> [f64; 2] {
    let mut b = Vec::new();
    space.eval(space.locate(xi, eta), xi, eta, &mut b);
    rationalize(&mut b, weights);
    b.iter().fold([0.0; 2], |a, v| [a[0] + v.value * controls[v.index][0], a[1] + v.value * controls[v.index][1]])
}

/// Controls and weights of a level-0 single-cell space from a cubic Bezier patch.
pub fn from_bezier_patch(space: &PhtSpace, g: &crate::spline::PatchGeometry) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    if space.num_elements() != 1 || g.n_u() != 4 || g.n_v() != 4 {
        return Err(PlateError::Unsupported("needs a one-cell mesh and a bicubic Bezier patch".into()));
    }
    let (w, h) = (space.mesh.width(), space.mesh.height());
    let mut pts = vec![[0.0; 2]; 16];
    let mut ws = vec![0.0; 16];
    for (vi, v) in space.vertices.iter().enumerate() {
        let (cx, cy) = ((v.x == w) as usize, (v.y == h) as usize);
        for k in 0..4 {
            let (tx, ty) = (k & 1, k >> 1);
            let idx = (2 * cx + tx) + 4 * (2 * cy + ty);
            pts[4 * vi + k] = g.control_points[idx];
            ws[4 * vi + k] = g.weights[idx];
        }
    }
    Ok((pts, ws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pht::HierTMesh;
    use crate::spline::{disk_single_patch, elevate_bezier_2_to_3, Edge};

    fn disk_rht() -> (PhtSpace, Vec<[f64; 2]>, Vec<f64>, crate::spline::PatchGeometry) {
        let g = elevate_bezier_2_to_3(&disk_single_patch(1.0)).unwrap();
        let sp = PhtSpace::new(&HierTMesh::new(1, 1).unwrap()).unwrap();
        let (p, w) = from_bezier_patch(&sp, &g).unwrap();
        (sp, p, w, g)
    }

    #[test]
    fn level0_disk_equals_nurbs() {
        let (sp, p, w, g) = disk_rht();
        for k in 0..10 {
            let (x, y) = (0.05 + 0.09 * k as f64, 0.3 + 0.05 * k as f64);
            let a = rht_point(&sp, &p, &w, x, y);
            let b = g.eval(x, y).unwrap().point;
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            let r = rht_eval(&sp, &w, sp.elements[0], 2.0 * x - 1.0, 2.0 * y - 1.0).unwrap();
            let n = g.nurbs_basis(x, y).unwrap();
            let sr: Vec<f64> = { let mut v: Vec<f64> = r.iter().map(|b| b.value).collect(); v.sort_by(f64::total_cmp); v };
            let sn: Vec<f64> = { let mut v: Vec<f64> = n.iter().map(|b| b.value).collect(); v.sort_by(f64::total_cmp); v };
            for (a, b) in sr.iter().zip(&sn) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((sr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn refined_disk_stays_circular() {
        let (sp, p, w, _) = disk_rht();
        let mut m = sp.mesh.clone();
        m.refine_uniform();
        let fine = PhtSpace::new(&m).unwrap();
        let (p2, w2) = rht_update_controls(&sp, &fine, &p, &w).unwrap();
        for k in 0..=50 {
            let t = k as f64 / 50.0;
            for e in Edge::ALL {
                let (x, y) = e.point(t);
                let q = rht_point(&fine, &p2, &w2, x, y);
                assert!((q[0] * q[0] + q[1] * q[1] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flat_square_is_preserved_with_unit_weights() {
        let m = HierTMesh::new(2, 2).unwrap();
        let sp = PhtSpace::new(&m).unwrap();
        let w = vec![1.0; sp.num_basis()];
        // Affine map x = 2 xi + eta, y = eta, represented by projecting onto vertex data.
        let f = |x: f64, y: f64| [2.0 * x + y, y];
        let pts: Vec<[f64; 2]> = {
            let cx: Vec<f64> = sp.vertices.iter().flat_map(|v| {
                let (x, y) = sp.mesh.to_param((v.x, v.y));
                super::super::space::hermite_solve(&v.hermite, &[2.0 * x + y, 2.0, 1.0, 0.0]).to_vec()
            }).collect();
            let cy: Vec<f64> = sp.vertices.iter().flat_map(|v| {
                let (_, y) = sp.mesh.to_param((v.x, v.y));
                super::super::space::hermite_solve(&v.hermite, &[y, 0.0, 1.0, 0.0]).to_vec()
            }).collect();
            cx.iter().zip(&cy).map(|(a, b)| [*a, *b]).collect()
        };
        let mut m2 = m.clone();
        m2.refine(&[m.leaves()[0], m.leaves()[3]]).unwrap();
        let fine = PhtSpace::new(&m2).unwrap();
        let (p2, w2) = rht_update_controls(&sp, &fine, &pts, &w).unwrap();
        assert!(w2.iter().all(|x| (x - 1.0).abs() < 1e-14));
        for k in 0..50 {
            let (x, y) = ((k as f64 * 0.37).fract(), (k as f64 * 0.61).fract());
            let a = rht_point(&sp, &pts, &w, x, y);
            let b = rht_point(&fine, &p2, &w2, x, y);
            let e = f(x, y);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            assert!((a[0] - e[0]).abs() < 1e-12 && (a[1] - e[1]).abs() < 1e-12);
        }
    }
}
