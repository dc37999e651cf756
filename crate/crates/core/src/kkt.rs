//! Directional KKT certificates for the value-function reformulation:
//! existence search by LP feasibility and independent re-verification of
//! every defining row.
//!
//! The stationarity condition couples `lambda_V` with a subgradient
//! surrogate `w` ranging over the convex hull of the Theta estimate. The
//! bilinear product `lambda_V w` is linearized exactly through hull
//! coordinates `mu` over the Theta vertices (`lambda_V = sum mu_j`), which
//! turns the search into a single LP. Hull vertices enter the x-block with
//! a minus sign and do not touch the y-block.

use serde::Serialize;
use thiserror::Error;

use crate::lpkernel::{feasible_point, LpError, Polyhedron};
use crate::model::FirstOrderData;
use crate::sensitivity::SubdiffEstimate;

#[derive(Debug, Clone, Error)]
pub enum KktError {
    #[error("Theta estimate has recession rays; certificate LP is inconclusive")]
    InconclusiveUnbounded,
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Serialize)]
pub struct KktConfig {
    /// Components with `grad g_i (u,v) < -tol_row` are zeroed to encode
    /// the orthogonality against the directional constraint derivatives.
    pub tol_row: f64,
    /// Residual tolerance for PASS/FAIL.
    pub tol_feas: f64,
    /// Lower bound imposed on `lambda_V` in the search LP.
    pub min_lambda_v: f64,
}

impl Default for KktConfig {
    fn default() -> Self {
        KktConfig { tol_row: 1e-9, tol_feas: 1e-9, min_lambda_v: 0.0 }
    }
}

/// Multipliers certifying the directional KKT condition at a point.
#[derive(Debug, Clone, Serialize)]
pub struct KktCertificate {
    pub lambda_v: f64,
    pub lambda_g: Vec<f64>,
    pub lambda_upper: Vec<f64>,
    /// Hull coordinates over the Theta vertices, `sum mu = lambda_V`.
    pub mu: Vec<f64>,
    /// Explicit lower-level multiplier (the W-vertex preimage) when the
    /// support of `mu` is a single vertex with a known preimage.
    pub lower_multiplier: Option<Vec<f64>>,
    pub direction: Vec<f64>,
}

/// One re-verified row of a certificate.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub name: String,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    pub pass: bool,
}

impl ResidualReport {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Search for a directional KKT certificate at the point of `fod` in
/// direction `(u, v)`. Returns `None` when the certificate LP is
/// infeasible. Complementarity is resolved from the active sets;
/// orthogonality fixes multipliers of rows with strictly negative
/// directional derivative to zero.
pub fn find_certificate(
    fod: &FirstOrderData,
    u: &[f64],
    v: &[f64],
    theta: &SubdiffEstimate,
    cfg: &KktConfig,
) -> Result<Option<KktCertificate>, KktError> {
    if !theta.bounded {
        return Err(KktError::InconclusiveUnbounded);
    }
    let hull = &theta.hull_vertices;
    let h = hull.len();
    let p = fod.jac_lower_cons.len();
    let q = fod.jac_upper_cons.len();
    let n = fod.n;
    let m = fod.m;
    let uv: Vec<f64> = u.iter().chain(v.iter()).cloned().collect();
    let nvars = h + p + q;
    let mut poly = Polyhedron::new(nvars);
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
        poly.push_eq(row, -fod.grad_upper[r]);
    }
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
        poly.push_eq(row, -fod.grad_upper[n + r]);
    }
    for j in 0..nvars {
        poly.push_nonneg(j);
    }
    for i in 0..p {
        let inactive = !fod.is_lower_active(i);
        let orth = dot(&fod.jac_lower_cons[i], &uv) < -cfg.tol_row;
        if inactive || orth {
            poly.push_fix(h + i, 0.0);
        }
    }
    for i in 0..q {
        let inactive = !fod.is_upper_active(i);
        let orth = dot(&fod.jac_upper_cons[i], &uv) < -cfg.tol_row;
        if inactive || orth {
            poly.push_fix(h + p + i, 0.0);
        }
    }
    if cfg.min_lambda_v > 0.0 {
        // sum mu >= min: -(sum mu) <= -min
        poly.push_ineq(
            (0..nvars).map(|j| if j < h { -1.0 } else { 0.0 }).collect(),
            -cfg.min_lambda_v,
        );
    }
    let Some(point) = feasible_point(&poly)? else {
        return Ok(None);
    };
    let mu = point[..h].to_vec();
    let lambda_g = point[h..h + p].to_vec();
    let lambda_upper = point[h + p..].to_vec();
    let lambda_v: f64 = mu.iter().sum();
    // recover the explicit lower multiplier when a single hull vertex
    // carries all the weight (or the hull itself is a singleton) and its
    // W-preimage is known
    let support: Vec<usize> = mu
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 1e-10)
        .map(|(j, _)| j)
        .collect();
    let active_vertex = match support.as_slice() {
        [j] => Some(*j),
        [] if h == 1 => Some(0),
        _ => None,
    };
    let lower_multiplier = active_vertex.and_then(|j| {
        let wv = &hull[j];
        theta.components.iter().find_map(|c| {
            c.w.polytope
                .vertices
                .iter()
                .position(|cv| cv.iter().zip(wv).all(|(a, b)| (a - b).abs() <= 1e-8))
                .map(|k| c.w.preimages[k].clone())
        })
    });
    Ok(Some(KktCertificate {
        lambda_v,
        lambda_g,
        lambda_upper,
        mu,
        lower_multiplier,
        direction: uv,
    }))
}

/// Recompute every defining row of a certificate from the raw first-order
/// data: the hull-form stationarity always, the explicit form additionally
/// when `lower_multiplier` is present.
pub fn verify_certificate(
    fod: &FirstOrderData,
    cert: &KktCertificate,
    theta: &SubdiffEstimate,
    cfg: &KktConfig,
) -> ResidualReport {
    let n = fod.n;
    let m = fod.m;
    let p = fod.jac_lower_cons.len();
    let q = fod.jac_upper_cons.len();
    let hull = &theta.hull_vertices;
    let tol = cfg.tol_feas;
    let mut rows: Vec<ResidualRow> = Vec::new();
    let mut push = |name: String, residual: f64, tol: f64| {
        rows.push(ResidualRow { name, residual, pass: residual.abs() <= tol });
    };

    // hull-form stationarity
    for r in 0..n + m {
        let mut acc = fod.grad_upper[r] + cert.lambda_v * fod.grad_lower[r];
        if r < n {
            for (j, w) in hull.iter().enumerate() {
                acc -= cert.mu.get(j).copied().unwrap_or(0.0) * w[r];
            }
        }
        for i in 0..p {
            acc += cert.lambda_g[i] * fod.jac_lower_cons[i][r];
        }
        for i in 0..q {
            acc += cert.lambda_upper[i] * fod.jac_upper_cons[i][r];
        }
        let block = if r < n { "x" } else { "y" };
        let idx = if r < n { r + 1 } else { r - n + 1 };
        push(format!("stationarity-{}{}", block, idx), acc, tol);
    }
    // mu consistency and signs
    let mu_sum: f64 = cert.mu.iter().sum();
    push("lambda_V = sum mu".to_string(), cert.lambda_v - mu_sum, tol);
    push("lambda_V >= 0".to_string(), (-cert.lambda_v).max(0.0), tol);
    for (j, w) in cert.mu.iter().enumerate() {
        push(format!("mu{} >= 0", j + 1), (-w).max(0.0), tol);
    }
    for (i, l) in cert.lambda_g.iter().enumerate() {
        push(format!("lambda_g{} >= 0", i + 1), (-l).max(0.0), tol);
    }
    for (i, l) in cert.lambda_upper.iter().enumerate() {
        push(format!("lambda_G{} >= 0", i + 1), (-l).max(0.0), tol);
    }
    // complementarity and directional orthogonality (inner products)
    let comp_g: f64 = cert
        .lambda_g
        .iter()
        .zip(&fod.lower_con_values)
        .map(|(l, g)| l * g)
        .sum();
    push("lambda_g perp g".to_string(), comp_g, tol);
    let orth_g: f64 = cert
        .lambda_g
        .iter()
        .enumerate()
        .map(|(i, l)| l * dot(&fod.jac_lower_cons[i], &cert.direction))
        .sum();
    push("lambda_g perp grad g (u,v)".to_string(), orth_g, tol);
    if q > 0 {
        let comp_gg: f64 = cert
            .lambda_upper
            .iter()
            .zip(&fod.upper_con_values)
            .map(|(l, g)| l * g)
            .sum();
        push("lambda_G perp G".to_string(), comp_gg, tol);
        let orth_gg: f64 = cert
            .lambda_upper
            .iter()
            .enumerate()
            .map(|(i, l)| l * dot(&fod.jac_upper_cons[i], &cert.direction))
            .sum();
        push("lambda_G perp grad G (u,v)".to_string(), orth_gg, tol);
    }
    // explicit form with the lower-level multiplier
    if let Some(lam) = &cert.lower_multiplier {
        for r in 0..n {
            let mut acc = fod.grad_upper[r];
            for i in 0..p {
                acc -= cert.lambda_v * lam[i] * fod.jac_lower_cons[i][r];
                acc += cert.lambda_g[i] * fod.jac_lower_cons[i][r];
            }
            for i in 0..q {
                acc += cert.lambda_upper[i] * fod.jac_upper_cons[i][r];
            }
            push(format!("explicit-x{}", r + 1), acc, tol);
        }
        for r in 0..m {
            let mut acc = fod.grad_upper[n + r] + cert.lambda_v * fod.grad_lower[n + r];
            for i in 0..p {
                acc += cert.lambda_g[i] * fod.jac_lower_cons[i][n + r];
            }
            for i in 0..q {
                acc += cert.lambda_upper[i] * fod.jac_upper_cons[i][n + r];
            }
            push(format!("explicit-y{}", r + 1), acc, tol);
        }
        for r in 0..m {
            let mut acc = fod.grad_lower[n + r];
            for i in 0..p {
                acc += lam[i] * fod.jac_lower_cons[i][n + r];
            }
            push(format!("lower-stationarity-y{}", r + 1), acc, tol);
        }
        for (i, l) in lam.iter().enumerate() {
            push(format!("lambda{} >= 0", i + 1), (-l).max(0.0), tol);
        }
        let comp: f64 = lam
            .iter()
            .zip(&fod.lower_con_values)
            .map(|(l, g)| l * g)
            .sum();
        push("lambda perp g".to_string(), comp, tol);
        let orth: f64 = lam
            .iter()
            .enumerate()
            .map(|(i, l)| l * dot(&fod.jac_lower_cons[i], &cert.direction))
            .sum();
        push("lambda perp grad g (u,v)".to_string(), orth, tol);
    }
    let pass = rows.iter().all(|r| r.pass);
    ResidualReport { rows, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprdsl::parse_program;
    use crate::lower::{directional_solutions, LowerConfig};
    use crate::model::{first_order, DirectionalContext};
    use crate::sensitivity::{theta_set, SensitivityConfig};

    const EX51_TEXT: &str = "\
dims: n=1 m=1
F = (sqrt(3)*x1-y1-sqrt(3))^2+x1+sqrt(3)*y1+3
f = 1-(x1-y1)^2
g = [ (x1-1)^2+y1^2-4 ; -sqrt(3)*x1-y1-sqrt(3) ]
box: y in [-3,3]^1
";

    fn sqrt3() -> f64 {
        3.0_f64.sqrt()
    }

    fn disk_setup() -> (crate::model::FirstOrderData, SubdiffEstimate) {
        let prog = parse_program(EX51_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-sqrt3()], 1e-8).unwrap();
        let u = sqrt3();
        let ctx = DirectionalContext::new(vec![0.0], vec![u]).with_schedule(1e-1, 0.5, 12);
        let ds = directional_solutions(&prog, &[0.0], &[u], &ctx, &LowerConfig::default())
            .unwrap();
        let theta =
            theta_set(&prog, &[0.0], &[u], &ds, &SensitivityConfig::default(), None).unwrap();
        (fod, theta)
    }

    #[test]
    fn paper_certificate_passes_verification() {
        let (fod, theta) = disk_setup();
        let cert = KktCertificate {
            lambda_v: 0.5,
            lambda_g: vec![1.0, 0.0],
            lambda_upper: vec![],
            mu: vec![0.5],
            lower_multiplier: Some(vec![1.0, 0.0]),
            direction: vec![sqrt3(), -1.0],
        };
        let cfg = KktConfig { tol_feas: 1e-10, ..Default::default() };
        let report = verify_certificate(&fod, &cert, &theta, &cfg);
        assert!(
            report.pass,
            "failing rows: {:?}",
            report.rows.iter().filter(|r| !r.pass).collect::<Vec<_>>()
        );
        assert!(report.max_residual() <= 1e-10);
    }

    #[test]
    fn found_certificate_always_verifies() {
        let (fod, theta) = disk_setup();
        // force a certificate that actually uses the hull term
        let cfg = KktConfig { min_lambda_v: 0.25, ..Default::default() };
        let cert = find_certificate(&fod, &[sqrt3()], &[-1.0], &theta, &cfg)
            .unwrap()
            .expect("certificate must exist at the optimal point");
        let report = verify_certificate(&fod, &cert, &theta, &cfg);
        assert!(
            report.pass,
            "failing rows: {:?}",
            report.rows.iter().filter(|r| !r.pass).collect::<Vec<_>>()
        );
        // W is a singleton here, so the explicit lower multiplier is
        // recovered and satisfies the lower-level stationarity
        let lam = cert.lower_multiplier.expect("singleton W has a preimage");
        let res = fod.grad_lower[1] + lam[0] * fod.jac_lower_cons[0][1]
            + lam[1] * fod.jac_lower_cons[1][1];
        assert!(res.abs() < 1e-8);
    }

    #[test]
    fn empty_theta_with_positive_lambda_v_has_no_certificate() {
        let (fod, theta) = disk_setup();
        let empty = SubdiffEstimate {
            direction: theta.direction.clone(),
            vprime: theta.vprime,
            components: Vec::new(),
            hull_vertices: Vec::new(),
            bounded: true,
            hypotheses: None,
            notes: Vec::new(),
        };
        let cfg = KktConfig { min_lambda_v: 1e-6, ..Default::default() };
        let found = find_certificate(&fod, &[sqrt3()], &[-1.0], &empty, &cfg).unwrap();
        assert!(found.is_none());
    }

    #[test]
    fn smooth_single_level_reduces_to_classical_kkt() {
        // F = x^2 + y^2 over the smooth singleton S(x) = {x}: at (0,0) the
        // reduced problem min 2x^2 is stationary and the certificate LP is
        // feasible with vanishing multipliers
        let prog = parse_program(
            "dims: n=1 m=1\nF = x1^2+y1^2\nf = (y1-x1)^2\nbox: y in [-2,2]^1\n",
        )
        .unwrap();
        let fod = first_order(&prog, &[0.0], &[0.0], 1e-8).unwrap();
        let ctx = DirectionalContext::new(vec![0.0], vec![1.0]).with_schedule(1e-1, 0.5, 10);
        let ds = directional_solutions(&prog, &[0.0], &[1.0], &ctx, &LowerConfig::default())
            .unwrap();
        let theta =
            theta_set(&prog, &[0.0], &[1.0], &ds, &SensitivityConfig::default(), None).unwrap();
        let cfg = KktConfig::default();
        let cert = find_certificate(&fod, &[1.0], &[1.0], &theta, &cfg)
            .unwrap()
            .expect("classical KKT point must admit a certificate");
        let report = verify_certificate(&fod, &cert, &theta, &cfg);
        assert!(report.pass);
    }

    #[test]
    fn perturbed_lambda_v_fails_stationarity() {
        let (fod, theta) = disk_setup();
        let cert = KktCertificate {
            lambda_v: 0.5 + 1e-3,
            lambda_g: vec![1.0, 0.0],
            lambda_upper: vec![],
            mu: vec![0.5 + 1e-3],
            lower_multiplier: None,
            direction: vec![sqrt3(), -1.0],
        };
        let cfg = KktConfig::default();
        let report = verify_certificate(&fod, &cert, &theta, &cfg);
        assert!(!report.pass);
        let st: Vec<&ResidualRow> = report
            .rows
            .iter()
            .filter(|r| r.name.starts_with("stationarity") && !r.pass)
            .collect();
        assert!(!st.is_empty());
        // residual is about 1e-3 * |grad f - w|
        assert!(st.iter().any(|r| r.residual.abs() > 1e-4));
    }

    #[test]
    fn negative_active_multiplier_fails_sign_row() {
        let (fod, theta) = disk_setup();
        let mut cert = find_certificate(
            &fod,
            &[sqrt3()],
            &[-1.0],
            &theta,
            &KktConfig::default(),
        )
        .unwrap()
        .unwrap();
        cert.lambda_g[0] = -0.25;
        let report = verify_certificate(&fod, &cert, &theta, &KktConfig::default());
        assert!(!report.pass);
        assert!(report
            .rows
            .iter()
            .any(|r| r.name == "lambda_g1 >= 0" && !r.pass));
    }

    #[test]
    fn unbounded_theta_is_inconclusive_not_truncated() {
        let (fod, theta) = disk_setup();
        let unbounded = SubdiffEstimate {
            direction: theta.direction.clone(),
            vprime: theta.vprime,
            components: Vec::new(),
            hull_vertices: Vec::new(),
            bounded: false,
            hypotheses: None,
            notes: Vec::new(),
        };
        let err = find_certificate(&fod, &[sqrt3()], &[-1.0], &unbounded, &KktConfig::default());
        assert!(matches!(err, Err(KktError::InconclusiveUnbounded)));
    }

    #[test]
    fn larger_orthogonality_tolerance_keeps_certificates() {
        let (fod, theta) = disk_setup();
        let tight = KktConfig { tol_row: 1e-9, ..Default::default() };
        let loose = KktConfig { tol_row: 1e-3, ..Default::default() };
        let at_tight = find_certificate(&fod, &[sqrt3()], &[-1.0], &theta, &tight).unwrap();
        let at_loose = find_certificate(&fod, &[sqrt3()], &[-1.0], &theta, &loose).unwrap();
        assert!(at_tight.is_some());
        assert!(at_loose.is_some(), "loosening tol_row must not lose feasibility");
    }
}
