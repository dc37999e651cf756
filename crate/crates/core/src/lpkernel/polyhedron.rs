//! H-representation polyhedra, vertex enumeration, and convex-hull
//! membership tests at small dimension.

use serde::Serialize;

use super::linalg;
use super::simplex::{feasible_point, solve_lp, LpStatus, Sense};
use super::{LpError, TOL_FEAS, TOL_VERT};

/// `{ lambda in R^dim : A_eq lambda = b_eq, A_in lambda <= b_in }`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Polyhedron {
    pub dim: usize,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<Vec<f64>>,
    pub b_in: Vec<f64>,
}

impl Polyhedron {
    pub fn new(dim: usize) -> Self {
        Polyhedron { dim, ..Default::default() }
    }

    pub fn push_eq(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.dim);
        self.a_eq.push(coeffs);
        self.b_eq.push(rhs);
    }

    pub fn push_ineq(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.dim);
        self.a_in.push(coeffs);
        self.b_in.push(rhs);
    }

    /// `lambda_i >= 0` as the row `-lambda_i <= 0`.
    pub fn push_nonneg(&mut self, i: usize) {
        let mut row = vec![0.0; self.dim];
        row[i] = -1.0;
        self.push_ineq(row, 0.0);
    }

    pub fn push_fix(&mut self, i: usize, value: f64) {
        let mut row = vec![0.0; self.dim];
        row[i] = 1.0;
        self.push_eq(row, value);
    }

    pub(crate) fn check_shapes(&self) {
        debug_assert!(self.a_eq.iter().all(|r| r.len() == self.dim));
        debug_assert!(self.a_in.iter().all(|r| r.len() == self.dim));
        debug_assert_eq!(self.a_eq.len(), self.b_eq.len());
        debug_assert_eq!(self.a_in.len(), self.b_in.len());
    }

    /// Largest constraint violation at a point (0 when feasible).
    pub fn max_violation(&self, point: &[f64]) -> f64 {
        let dot = |row: &[f64]| row.iter().zip(point).map(|(a, b)| a * b).sum::<f64>();
        let mut v: f64 = 0.0;
        for (row, &b) in self.a_eq.iter().zip(&self.b_eq) {
            v = v.max((dot(row) - b).abs());
        }
        for (row, &d) in self.a_in.iter().zip(&self.b_in) {
            v = v.max(dot(row) - d);
        }
        v
    }

    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        self.max_violation(point) <= tol
    }
}

/// V-representation: vertex list plus recession rays. `bounded()` holds
/// exactly when the ray list is empty.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Polytope {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub rays: Vec<Vec<f64>>,
}

impl Polytope {
    pub fn bounded(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() && self.rays.is_empty()
    }

    pub fn from_vertices(dim: usize, vertices: Vec<Vec<f64>>) -> Self {
        Polytope { dim, vertices, rays: Vec::new() }
    }
}

/// Guard for the exhaustive basis enumeration.
pub const VERTEX_DIM_MAX: usize = 8;

fn dedup_push(list: &mut Vec<Vec<f64>>, v: Vec<f64>, tol: f64) {
    let dup = list
        .iter()
        .any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() <= tol));
    if !dup {
        list.push(v);
    }
}

/// All basic feasible solutions of `poly`, deduplicated within `TOL_VERT`;
/// recession rays are collected from unbounded coordinate probes.
pub fn enumerate_vertices(poly: &Polyhedron) -> Result<Polytope, LpError> {
    let r = poly.dim;
    if r > VERTEX_DIM_MAX {
        return Err(LpError::DimensionTooLarge { dim: r, max: VERTEX_DIM_MAX });
    }
    if r == 0 {
        return Ok(match feasible_point(poly)? {
            Some(_) => Polytope { dim: 0, vertices: vec![Vec::new()], rays: Vec::new() },
            None => Polytope::default(),
        });
    }
    let mi = poly.a_in.len();
    let eq_rank = linalg::rank(&poly.a_eq, 1e-10);
    let need = r.saturating_sub(eq_rank);
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    // choose `need` inequality rows to make the tight system square-rank
    let mut subset: Vec<usize> = (0..need).collect();
    if need > mi {
        // not enough rows to pin a vertex; fall through to ray probing
    } else {
        loop {
            let mut rows: Vec<Vec<f64>> = poly.a_eq.clone();
            let mut rhs: Vec<f64> = poly.b_eq.clone();
            for &k in &subset {
                rows.push(poly.a_in[k].clone());
                rhs.push(poly.b_in[k]);
            }
            if let Some(pt) = linalg::solve_consistent(&rows, &rhs, 1e-8) {
                if poly.contains(&pt, TOL_FEAS * 10.0) {
                    dedup_push(&mut vertices, pt, TOL_VERT);
                }
            }
            // next combination in lexicographic order
            if need == 0 {
                break;
            }
            let mut i = need;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if subset[i] < mi - (need - i) {
                    subset[i] += 1;
                    for j in i + 1..need {
                        subset[j] = subset[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    subset.clear();
                    break;
                }
            }
            if subset.is_empty() || need == 0 {
                break;
            }
        }
    }

    // boundedness probe: min/max each coordinate
    let mut rays: Vec<Vec<f64>> = Vec::new();
    for i in 0..r {
        let mut c = vec![0.0; r];
        c[i] = 1.0;
        for sense in [Sense::Max, Sense::Min] {
            let res = solve_lp(poly, &c, sense)?;
            match res.status {
                LpStatus::Infeasible => return Ok(Polytope { dim: r, ..Default::default() }),
                LpStatus::Unbounded => {
                    if let Some(ray) = res.ray {
                        let n = ray.iter().map(|a| a * a).sum::<f64>().sqrt();
                        if n > 1e-12 {
                            dedup_push(&mut rays, ray.iter().map(|a| a / n).collect(), TOL_VERT);
                        }
                    }
                }
                LpStatus::Optimal => {}
            }
        }
    }
    Ok(Polytope { dim: r, vertices, rays })
}

/// Certificate for [`zero_in_convex_hull`]: convex coefficients when the
/// origin is inside, a strictly separating functional when it is not.
#[derive(Debug, Clone, Serialize)]
pub enum HullCertificate {
    Coefficients(Vec<f64>),
    Separator(Vec<f64>),
}

/// Does `0` lie in the convex hull of the polytope's vertices? Requires a
/// bounded polytope. The positive certificate reconstructs the origin
/// within `TOL_FEAS`; the negative one strictly separates on all vertices.
pub fn zero_in_convex_hull(p: &Polytope) -> Result<(bool, HullCertificate), LpError> {
    assert!(p.bounded(), "zero_in_convex_hull needs a bounded polytope");
    let k = p.vertices.len();
    if k == 0 {
        return Ok((false, HullCertificate::Separator(vec![0.0; p.dim])));
    }
    // feasibility in mu: sum mu_j v_j = 0, sum mu_j = 1, mu >= 0
    let mut sys = Polyhedron::new(k);
    for coord in 0..p.dim {
        let row: Vec<f64> = p.vertices.iter().map(|v| v[coord]).collect();
        sys.push_eq(row, 0.0);
    }
    sys.push_eq(vec![1.0; k], 1.0);
    for j in 0..k {
        sys.push_nonneg(j);
    }
    if let Some(mu) = feasible_point(&sys)? {
        return Ok((true, HullCertificate::Coefficients(mu)));
    }
    // separator: max t s.t. a . v_j >= t for all j, |a_i| <= 1
    let mut sep = Polyhedron::new(p.dim + 1);
    for v in &p.vertices {
        let mut row: Vec<f64> = v.iter().map(|a| -a).collect();
        row.push(1.0); // -a.v + t <= 0
        sep.push_ineq(row, 0.0);
    }
    for i in 0..p.dim {
        let mut row = vec![0.0; p.dim + 1];
        row[i] = 1.0;
        sep.push_ineq(row.clone(), 1.0);
        row[i] = -1.0;
        sep.push_ineq(row, 1.0);
    }
    let mut c = vec![0.0; p.dim + 1];
    c[p.dim] = 1.0;
    let res = solve_lp(&sep, &c, Sense::Max)?;
    if res.status != LpStatus::Optimal || res.value <= TOL_FEAS {
        return Err(LpError::NumericalFailure(
            "hull membership and separation both failed",
        ));
    }
    Ok((false, HullCertificate::Separator(res.point[..p.dim].to_vec())))
}

/// Is `point` in the convex hull of `points`?
pub fn point_in_convex_hull(point: &[f64], points: &[Vec<f64>]) -> Result<bool, LpError> {
    let k = points.len();
    if k == 0 {
        return Ok(false);
    }
    let dim = point.len();
    let mut sys = Polyhedron::new(k);
    for coord in 0..dim {
        let row: Vec<f64> = points.iter().map(|v| v[coord]).collect();
        sys.push_eq(row, point[coord]);
    }
    sys.push_eq(vec![1.0; k], 1.0);
    for j in 0..k {
        sys.push_nonneg(j);
    }
    Ok(feasible_point(&sys)?.is_some())
}

/// Vertices of the convex hull of a finite point set: the points that are
/// not convex combinations of the others.
pub fn hull_vertices(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LpError> {
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for p in points {
        dedup_push(&mut distinct, p.clone(), TOL_VERT);
    }
    if distinct.len() <= 1 {
        return Ok(distinct);
    }
    let mut out = Vec::new();
    for (i, p) in distinct.iter().enumerate() {
        let others: Vec<Vec<f64>> = distinct
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| v.clone())
            .collect();
        if !point_in_convex_hull(p, &others)? {
            out.push(p.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sqrt3() -> f64 {
        3.0_f64.sqrt()
    }

    #[test]
    fn multiplier_set_vertices_of_disk_instance() {
        // {l >= 0 : 2sqrt3 - 2sqrt3 l1 - l2 = 0}: vertices (1,0) and (0, 2sqrt3)
        let mut p = Polyhedron::new(2);
        p.push_eq(vec![2.0 * sqrt3(), 1.0], 2.0 * sqrt3());
        p.push_nonneg(0);
        p.push_nonneg(1);
        let pt = enumerate_vertices(&p).unwrap();
        assert!(pt.bounded());
        assert_eq!(pt.vertices.len(), 2);
        let mut vs = pt.vertices.clone();
        vs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((vs[0][0]).abs() < 1e-8 && (vs[0][1] - 2.0 * sqrt3()).abs() < 1e-8);
        assert!((vs[1][0] - 1.0).abs() < 1e-8 && (vs[1][1]).abs() < 1e-8);
    }

    #[test]
    fn standard_simplex_vertices() {
        let mut p = Polyhedron::new(3);
        p.push_eq(vec![1.0, 1.0, 1.0], 1.0);
        for i in 0..3 {
            p.push_nonneg(i);
        }
        let pt = enumerate_vertices(&p).unwrap();
        assert_eq!(pt.vertices.len(), 3);
        for v in &pt.vertices {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(v.iter().any(|c| (c - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn halfline_vertex_and_ray() {
        let mut p = Polyhedron::new(1);
        p.push_nonneg(0);
        let pt = enumerate_vertices(&p).unwrap();
        assert_eq!(pt.vertices, vec![vec![0.0]]);
        assert_eq!(pt.rays.len(), 1);
        assert!((pt.rays[0][0] - 1.0).abs() < 1e-9);
        assert!(!pt.bounded());
    }

    #[test]
    fn dimension_guard() {
        let p = Polyhedron::new(9);
        assert!(matches!(
            enumerate_vertices(&p),
            Err(LpError::DimensionTooLarge { dim: 9, max: 8 })
        ));
    }

    #[test]
    fn zero_in_hull_by_symmetry() {
        let p = Polytope::from_vertices(
            2,
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
        );
        let (inside, cert) = zero_in_convex_hull(&p).unwrap();
        assert!(inside);
        match cert {
            HullCertificate::Coefficients(mu) => {
                assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let x: f64 = mu[0] - mu[1];
                let y: f64 = mu[2] - mu[3];
                assert!(x.abs() < 1e-9 && y.abs() < 1e-9);
            }
            _ => panic!("expected coefficients"),
        }
    }

    #[test]
    fn zero_outside_hull_gets_separator() {
        let p = Polytope::from_vertices(2, vec![vec![1.0, 1.0], vec![2.0, 1.0]]);
        let (inside, cert) = zero_in_convex_hull(&p).unwrap();
        assert!(!inside);
        match cert {
            HullCertificate::Separator(a) => {
                for v in &p.vertices {
                    let s: f64 = a.iter().zip(v).map(|(x, y)| x * y).sum();
                    assert!(s > TOL_FEAS, "separator not strict: {}", s);
                }
            }
            _ => panic!("expected separator"),
        }
    }

    #[test]
    fn singleton_zero_is_inside() {
        let p = Polytope::from_vertices(3, vec![vec![0.0, 0.0, 0.0]]);
        let (inside, cert) = zero_in_convex_hull(&p).unwrap();
        assert!(inside);
        assert!(matches!(cert, HullCertificate::Coefficients(mu) if (mu[0] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn hull_vertex_filter_drops_interior_points() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.25, 0.25], // interior
            vec![0.5, 0.5],   // edge midpoint
        ];
        let hull = hull_vertices(&pts).unwrap();
        assert_eq!(hull.len(), 3);
    }
}
