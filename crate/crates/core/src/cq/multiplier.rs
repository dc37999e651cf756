//! Abnormal-multiplier systems behind NNAMCQ and directional FOSCMS.
//!
//! Both ask whether a nonzero `(alpha, nu_g, nu_G) >= 0` with
//! complementarity exists such that
//!
//! ```text
//! 0 in alpha grad f - alpha co(Theta) x {0} + grad g^T nu_g + grad G^T nu_G
//! ```
//!
//! The bilinear term `alpha w`, `w in co(Theta)`, is linearized exactly
//! through hull coordinates: `alpha w = sum mu_j w_j` with
//! `alpha = sum mu_j`, `mu >= 0`. Positive homogeneity lets the conic
//! degree of freedom be removed by the normalization
//! `alpha + sum nu = 1`, turning existence into LP feasibility.

use serde::Serialize;

use super::{CqConfig, CqError, CqReport, CqWitness};
use crate::lpkernel::{enumerate_vertices, feasible_point, Polyhedron};
use crate::model::FirstOrderData;
use crate::sensitivity::SubdiffEstimate;
use crate::verdict::Verdict;

/// A nonzero abnormal multiplier, normalized to component sum 1.
#[derive(Debug, Clone, Serialize)]
pub struct MultiplierWitness {
    pub alpha: f64,
    pub nu_g: Vec<f64>,
    pub nu_upper: Vec<f64>,
    /// Hull coordinates over the Theta vertices with `sum mu = alpha`.
    pub mu: Vec<f64>,
    /// Largest residual of the defining linear system, recomputed from the
    /// raw first-order data.
    pub max_residual: f64,
}

pub(crate) struct MultiplierSystem {
    pub poly: Polyhedron,
    pub hull: Vec<Vec<f64>>,
    pub p: usize,
}

/// Orthogonality data for the FOSCMS variant.
pub(crate) struct DirectionRows {
    /// grad g_i (u,v) per lower constraint.
    pub dg: Vec<f64>,
    /// grad G_i (u,v) per upper constraint.
    pub dg_upper: Vec<f64>,
    /// grad f (u,v) - V'(x;u).
    pub df_minus_vprime: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Build the normalized multiplier polyhedron. Variables are ordered
/// `(mu_1..mu_h, nu_g_1..nu_g_p, nu_G_1..nu_G_q)`, all nonnegative.
pub(crate) fn build_system(
    fod: &FirstOrderData,
    theta: &SubdiffEstimate,
    direction_rows: Option<&DirectionRows>,
) -> Result<MultiplierSystem, CqError> {
    if !theta.bounded {
        return Err(CqError::InconclusiveUnbounded);
    }
    let hull = theta.hull_vertices.clone();
    let h = hull.len();
    let p = fod.jac_lower_cons.len();
    let q = fod.jac_upper_cons.len();
    let n = fod.n;
    let m = fod.m;
    let nvars = h + p + q;
    let mut poly = Polyhedron::new(nvars);

    // x-block: sum_j mu_j (grad_x f - w_j) + sum_i nu_g_i grad_x g_i
    //          + sum_i nu_G_i grad_x G_i = 0
    for r in 0..n {
        let mut row = vec![0.0; nvars];
        for (j, w) in hull.iter().enumerate() {
            row[j] = fod.grad_lower[r] - w[r];
        }
        for i in 0..p {
            row[h + i] = fod.jac_lower_cons[i][r];
        }
        for i in 0..q {
            row[h + p + i] = fod.jac_upper_cons[i][r];
        }
        poly.push_eq(row, 0.0);
    }
    // y-block: the Theta term carries a zero y-component
    for r in 0..m {
        let mut row = vec![0.0; nvars];
        for j in 0..h {
            row[j] = fod.grad_lower[n + r];
        }
        for i in 0..p {
            row[h + i] = fod.jac_lower_cons[i][n + r];
        }
        for i in 0..q {
            row[h + p + i] = fod.jac_upper_cons[i][n + r];
        }
        poly.push_eq(row, 0.0);
    }
    // normalization: alpha + sum nu = 1
    poly.push_eq(vec![1.0; nvars], 1.0);
    // signs and complementarity
    for j in 0..nvars {
        poly.push_nonneg(j);
    }
    for i in 0..p {
        if !fod.is_lower_active(i) {
            poly.push_fix(h + i, 0.0);
        }
    }
    for i in 0..q {
        if !fod.is_upper_active(i) {
            poly.push_fix(h + p + i, 0.0);
        }
    }
    // directional orthogonality rows (FOSCMS and quasi-normality)
    if let Some(dir) = direction_rows {
        let mut row = vec![0.0; nvars];
        for i in 0..p {
            row[h + i] = dir.dg[i];
        }
        poly.push_eq(row, 0.0);
        let mut row = vec![0.0; nvars];
        for i in 0..q {
            row[h + p + i] = dir.dg_upper[i];
        }
        poly.push_eq(row, 0.0);
        let mut row = vec![0.0; nvars];
        for j in 0..h {
            row[j] = dir.df_minus_vprime;
        }
        poly.push_eq(row, 0.0);
    }
    Ok(MultiplierSystem { poly, hull, p })
}

pub(crate) fn witness_from_point(
    sys: &MultiplierSystem,
    fod: &FirstOrderData,
    point: &[f64],
) -> MultiplierWitness {
    let h = sys.hull.len();
    let mu = point[..h].to_vec();
    let nu_g = point[h..h + sys.p].to_vec();
    let nu_upper = point[h + sys.p..].to_vec();
    let alpha: f64 = mu.iter().sum();
    // recompute stationarity residuals from raw data
    let n = fod.n;
    let m = fod.m;
    let mut max_residual: f64 = 0.0;
    for r in 0..n + m {
        let mut acc = alpha * fod.grad_lower[r];
        if r < n {
            for (j, w) in sys.hull.iter().enumerate() {
                acc -= mu[j] * w[r];
            }
        }
        for (i, nu) in nu_g.iter().enumerate() {
            acc += nu * fod.jac_lower_cons[i][r];
        }
        for (i, nu) in nu_upper.iter().enumerate() {
            acc += nu * fod.jac_upper_cons[i][r];
        }
        max_residual = max_residual.max(acc.abs());
    }
    MultiplierWitness { alpha, nu_g, nu_upper, mu, max_residual }
}

/// No-nonzero-abnormal-multiplier CQ. FAILS exactly when the normalized
/// multiplier system is feasible; the witness re-verifies against the raw
/// first-order data.
pub fn check_nnamcq(
    fod: &FirstOrderData,
    theta: &SubdiffEstimate,
    cfg: &CqConfig,
) -> Result<CqReport, CqError> {
    let sys = build_system(fod, theta, None)?;
    match feasible_point(&sys.poly)? {
        Some(pt) => {
            let w = witness_from_point(&sys, fod, &pt);
            debug_assert!(w.max_residual <= cfg.tol_feas);
            Ok(CqReport::new("nnamcq", Verdict::Fails).with_witness(CqWitness::Multiplier(w)))
        }
        None => Ok(CqReport::new("nnamcq", Verdict::Holds)),
    }
}

/// First-order sufficient condition for metric subregularity in direction
/// `(u, v)`: the NNAMCQ system plus the orthogonality rows against the
/// directional derivatives of the constraint block. FAILS iff a nonzero
/// normalized solution exists.
pub fn check_foscms(
    fod: &FirstOrderData,
    u: &[f64],
    v: &[f64],
    theta: &SubdiffEstimate,
    vprime_u: f64,
    cfg: &CqConfig,
) -> Result<CqReport, CqError> {
    let sys = build_system(fod, theta, Some(&direction_rows(fod, u, v, vprime_u)))?;
    match feasible_point(&sys.poly)? {
        Some(pt) => {
            let w = witness_from_point(&sys, fod, &pt);
            debug_assert!(w.max_residual <= cfg.tol_feas);
            Ok(CqReport::new("foscms", Verdict::Fails).with_witness(CqWitness::Multiplier(w)))
        }
        None => Ok(CqReport::new("foscms", Verdict::Holds)),
    }
}

pub(crate) fn direction_rows(
    fod: &FirstOrderData,
    u: &[f64],
    v: &[f64],
    vprime_u: f64,
) -> DirectionRows {
    let uv: Vec<f64> = u.iter().chain(v.iter()).cloned().collect();
    DirectionRows {
        dg: fod.jac_lower_cons.iter().map(|g| dot(g, &uv)).collect(),
        dg_upper: fod.jac_upper_cons.iter().map(|g| dot(g, &uv)).collect(),
        df_minus_vprime: dot(&fod.grad_lower, &uv) - vprime_u,
    }
}

/// Normalized candidate abnormal multipliers: the vertices of the FOSCMS
/// polyhedron (stage 1 of the quasi-normality check).
pub(crate) fn candidate_vertices(
    fod: &FirstOrderData,
    theta: &SubdiffEstimate,
    u: &[f64],
    v: &[f64],
    vprime_u: f64,
) -> Result<(MultiplierSystem, Vec<Vec<f64>>), CqError> {
    let sys = build_system(fod, theta, Some(&direction_rows(fod, u, v, vprime_u)))?;
    let nvars = sys.poly.dim;
    if nvars > crate::lpkernel::VERTEX_DIM_MAX {
        // the normalized polyhedron is a bounded slice; fall back to a
        // single feasible point when full enumeration is out of reach
        return match feasible_point(&sys.poly)? {
            Some(pt) => Ok((sys, vec![pt])),
            None => Ok((sys, Vec::new())),
        };
    }
    let pt = enumerate_vertices(&sys.poly)?;
    Ok((sys, pt.vertices))
}
