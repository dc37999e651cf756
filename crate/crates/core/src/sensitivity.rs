//! Directional sensitivity of the lower-level value function: the
//! directional derivative V'(x;u) through the multiplier LP, the attaining
//! primal directions Sigma, the W and Theta polytopes that bound the
//! directional (Clarke) subdifferential from above, and a finite-difference
//! cross check.

use serde::Serialize;
use thiserror::Error;

use crate::exprdsl::EvalError;
use crate::lower::{self, DirectionalSolutionSet, HypothesisReport, LowerConfig, LowerError};
use crate::lpkernel::{
    self, enumerate_vertices, hull_vertices, solve_lp, LpError, LpStatus, Polyhedron, Polytope,
    Sense,
};
use crate::model::BilevelProgram;

#[derive(Debug, Clone, Error)]
pub enum SensitivityError {
    #[error("directional solution set is empty; cannot evaluate the derivative formula")]
    EmptyDirectionalSolutions,
    #[error("multiplier set at y = {y:?} is empty")]
    EmptyMultiplierSet { y: Vec<f64> },
    #[error("inner LP over the multiplier set at y = {y:?} is unbounded; the sensitivity hypotheses likely fail here")]
    InnerLpUnbounded { y: Vec<f64> },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityConfig {
    /// Active-set tolerance used when building multiplier sets at
    /// numerically found solutions.
    pub tol_act: f64,
    /// Box guard on the primal direction LP over v.
    pub box_guard: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { tol_act: 1e-6, box_guard: 1e3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DerivMethod {
    LpFormula,
    FiniteDiff,
}

/// Inner min-max solve at one directional solution.
#[derive(Debug, Clone, Serialize)]
pub struct InnerSolve {
    pub y: Vec<f64>,
    /// max over Lambda(x,y) of grad_x L . u
    pub dual_value: f64,
    pub lambda_star: Vec<f64>,
    /// min over L(x,y;u) of grad f (u,v), with the box guard
    pub primal_value: f64,
    pub v_star: Vec<f64>,
    pub guard_active: bool,
}

/// V'(x;u) by the LP formula, with the attaining pieces.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionalDerivative {
    pub value: f64,
    pub method: DerivMethod,
    pub attaining_y: Vec<f64>,
    pub attaining_multiplier: Vec<f64>,
    pub attaining_v: Vec<f64>,
    pub inner: Vec<InnerSolve>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The inner dual LP `max_{lambda in Lambda(x,y)} grad_x L(x,y;lambda) . u`
/// and its primal counterpart over the linearized feasible directions.
fn inner_solve(
    prog: &BilevelProgram,
    x_bar: &[f64],
    y: &[f64],
    u: &[f64],
    cfg: &SensitivityConfig,
) -> Result<InnerSolve, SensitivityError> {
    let n = prog.n;
    let m = prog.m;
    let fd = prog.lower_objective.eval_dual(x_bar, y)?;
    let grad_f_x = &fd.derivs[..n];
    let grad_f_y = &fd.derivs[n..];
    let mut active = Vec::new();
    let mut grads = Vec::new();
    for (i, g) in prog.lower_constraints.iter().enumerate() {
        let d = g.eval_dual(x_bar, y)?;
        if d.value.abs() <= cfg.tol_act {
            active.push(i);
        }
        grads.push(d.derivs);
    }
    let const_term = dot(grad_f_x, u);

    // dual: max const + sum_i lambda_i (grad_x g_i . u) over Lambda
    let lambda_poly = lower::multiplier_set(prog, x_bar, y, cfg.tol_act)?;
    let obj: Vec<f64> = grads.iter().map(|g| dot(&g[..n], u)).collect();
    let dual = solve_lp(&lambda_poly, &obj, Sense::Max)?;
    let (dual_value, lambda_star) = match dual.status {
        LpStatus::Optimal => (const_term + dual.value, dual.point),
        LpStatus::Infeasible => {
            return Err(SensitivityError::EmptyMultiplierSet { y: y.to_vec() })
        }
        LpStatus::Unbounded => return Err(SensitivityError::InnerLpUnbounded { y: y.to_vec() }),
    };

    // primal: min grad_y f . v  s.t.  grad g_i (u,v) <= 0 (i active),
    // |v|_inf <= box guard
    let mut vpoly = Polyhedron::new(m);
    for &i in &active {
        let coeffs: Vec<f64> = grads[i][n..].to_vec();
        vpoly.push_ineq(coeffs, -dot(&grads[i][..n], u));
    }
    for j in 0..m {
        let mut row = vec![0.0; m];
        row[j] = 1.0;
        vpoly.push_ineq(row.clone(), cfg.box_guard);
        row[j] = -1.0;
        vpoly.push_ineq(row, cfg.box_guard);
    }
    let primal = solve_lp(&vpoly, grad_f_y.to_vec().as_slice(), Sense::Min)?;
    let (primal_value, v_star) = match primal.status {
        LpStatus::Optimal => (const_term + primal.value, primal.point),
        // the box guard makes the primal bounded; infeasible linearized
        // directions mirror an unbounded dual
        _ => return Err(SensitivityError::InnerLpUnbounded { y: y.to_vec() }),
    };
    let guard_active = v_star.iter().any(|v| v.abs() >= cfg.box_guard * (1.0 - 1e-9));
    Ok(InnerSolve {
        y: y.to_vec(),
        dual_value,
        lambda_star,
        primal_value,
        v_star,
        guard_active,
    })
}

/// V'(x;u) = min over directional solutions of the inner LP maxima.
pub fn dderiv_lp(
    prog: &BilevelProgram,
    x_bar: &[f64],
    u: &[f64],
    dirsols: &DirectionalSolutionSet,
    cfg: &SensitivityConfig,
) -> Result<DirectionalDerivative, SensitivityError> {
    if dirsols.representatives.is_empty() {
        return Err(SensitivityError::EmptyDirectionalSolutions);
    }
    let mut inner = Vec::new();
    for rep in &dirsols.representatives {
        inner.push(inner_solve(prog, x_bar, &rep.y, u, cfg)?);
    }
    let best = inner
        .iter()
        .min_by(|a, b| a.dual_value.partial_cmp(&b.dual_value).unwrap())
        .unwrap()
        .clone();
    Ok(DirectionalDerivative {
        value: best.dual_value,
        method: DerivMethod::LpFormula,
        attaining_y: best.y.clone(),
        attaining_multiplier: best.lambda_star.clone(),
        attaining_v: best.v_star.clone(),
        inner,
    })
}

/// Finite-difference estimate of V'(x;u) with Richardson extrapolation
/// over the geometric schedule.
#[derive(Debug, Clone, Serialize)]
pub struct FdEstimate {
    pub value: f64,
    /// Stability of the extrapolation: difference of the two most
    /// consistent consecutive extrapolants.
    pub residual: f64,
    pub quotients: Vec<f64>,
}

/// Directional difference quotients of `value_fn` (defaults to the grid
/// solver when built via [`dderiv_fd`]).
pub fn dderiv_fd_with<F>(
    x_bar: &[f64],
    u: &[f64],
    t0: f64,
    beta: f64,
    count: usize,
    mut value_fn: F,
) -> Result<FdEstimate, SensitivityError>
where
    F: FnMut(&[f64]) -> Result<f64, SensitivityError>,
{
    assert!(count >= 3, "need at least three schedule points");
    let v0 = value_fn(x_bar)?;
    let mut quotients = Vec::with_capacity(count);
    for k in 0..count {
        let t = t0 * beta.powi(k as i32);
        let xk: Vec<f64> = x_bar.iter().zip(u).map(|(a, b)| a + t * b).collect();
        quotients.push((value_fn(&xk)? - v0) / t);
    }
    // one Richardson level for a geometric schedule: the leading O(t)
    // error term cancels in (q_{k+1} - beta q_k) / (1 - beta)
    let level1: Vec<f64> = quotients
        .windows(2)
        .map(|w| (w[1] - beta * w[0]) / (1.0 - beta))
        .collect();
    let mut best = (f64::INFINITY, *level1.last().unwrap());
    for w in level1.windows(2) {
        let diff = (w[1] - w[0]).abs();
        if diff < best.0 {
            best = (diff, w[1]);
        }
    }
    Ok(FdEstimate { value: best.1, residual: best.0, quotients })
}

/// Finite-difference V'(x;u) using the global lower-level solver for V.
pub fn dderiv_fd(
    prog: &BilevelProgram,
    x_bar: &[f64],
    u: &[f64],
    t0: f64,
    beta: f64,
    count: usize,
    lower_cfg: &LowerConfig,
) -> Result<FdEstimate, SensitivityError> {
    dderiv_fd_with(x_bar, u, t0, beta, count, |x| {
        Ok(lower::solve_lower(prog, x, lower_cfg)?.value)
    })
}

/// Optimal-face vertices of the guarded primal direction LP: the returned
/// list spans Sigma(x,y,u) up to the box guard.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaSet {
    pub vertices: Vec<Vec<f64>>,
    pub optimal_value: f64,
    pub guard_active: bool,
}

pub fn sigma_set(
    prog: &BilevelProgram,
    x_bar: &[f64],
    y: &[f64],
    u: &[f64],
    cfg: &SensitivityConfig,
) -> Result<SigmaSet, SensitivityError> {
    let n = prog.n;
    let m = prog.m;
    let fd = prog.lower_objective.eval_dual(x_bar, y)?;
    let grad_f_y: Vec<f64> = fd.derivs[n..].to_vec();
    let inner = inner_solve(prog, x_bar, y, u, cfg)?;
    // optimal face: the primal polyhedron plus the tight objective row
    let mut face = Polyhedron::new(m);
    for (i, g) in prog.lower_constraints.iter().enumerate() {
        let d = g.eval_dual(x_bar, y)?;
        if d.value.abs() <= cfg.tol_act {
            face.push_ineq(d.derivs[n..].to_vec(), -dot(&d.derivs[..n], u));
        }
        let _ = i;
    }
    for j in 0..m {
        let mut row = vec![0.0; m];
        row[j] = 1.0;
        face.push_ineq(row.clone(), cfg.box_guard);
        row[j] = -1.0;
        face.push_ineq(row, cfg.box_guard);
    }
    let objective_rhs = inner.primal_value - dot(&fd.derivs[..n], u);
    face.push_eq(grad_f_y, objective_rhs);
    let vertices = if m <= lpkernel::VERTEX_DIM_MAX {
        let poly = enumerate_vertices(&face)?;
        if poly.vertices.is_empty() {
            vec![inner.v_star.clone()]
        } else {
            poly.vertices
        }
    } else {
        vec![inner.v_star.clone()]
    };
    let guard_active = vertices
        .iter()
        .flat_map(|v| v.iter())
        .any(|c| c.abs() >= cfg.box_guard * (1.0 - 1e-9));
    Ok(SigmaSet { vertices, optimal_value: inner.primal_value, guard_active })
}

/// Image polytope `W(x,y,u,v) = { grad_x f + grad_x g^T lambda }` over
/// `lambda in Lambda(x,y)` orthogonal to `grad g(x,y)(u,v)`.
#[derive(Debug, Clone, Serialize)]
pub struct WSet {
    pub polytope: Polytope,
    /// Multiplier vertex behind each image vertex, same order.
    pub preimages: Vec<Vec<f64>>,
}

pub fn w_set(
    prog: &BilevelProgram,
    x_bar: &[f64],
    y: &[f64],
    u: &[f64],
    v: &[f64],
    cfg: &SensitivityConfig,
) -> Result<WSet, SensitivityError> {
    let n = prog.n;
    let fd = prog.lower_objective.eval_dual(x_bar, y)?;
    let grad_f_x: Vec<f64> = fd.derivs[..n].to_vec();
    let mut poly = lower::multiplier_set(prog, x_bar, y, cfg.tol_act)?;
    let uv: Vec<f64> = u.iter().chain(v.iter()).cloned().collect();
    let mut grads_x: Vec<Vec<f64>> = Vec::new();
    let mut perp_row = Vec::new();
    for g in &prog.lower_constraints {
        let d = g.eval_dual(x_bar, y)?;
        perp_row.push(dot(&d.derivs, &uv));
        grads_x.push(d.derivs[..n].to_vec());
    }
    if poly.dim > 0 {
        poly.push_eq(perp_row, 0.0);
    }
    let lam = enumerate_vertices(&poly)?;
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut preimages: Vec<Vec<f64>> = Vec::new();
    for lv in &lam.vertices {
        let mut w = grad_f_x.clone();
        for (gi, li) in grads_x.iter().zip(lv) {
            for (wj, gj) in w.iter_mut().zip(gi) {
                *wj += li * gj;
            }
        }
        let dup = vertices
            .iter()
            .any(|ex: &Vec<f64>| ex.iter().zip(&w).all(|(a, b)| (a - b).abs() <= 1e-8));
        if !dup {
            vertices.push(w);
            preimages.push(lv.clone());
        }
    }
    // multiplier rays map to recession rays of the image; zero images do
    // not change the set
    let mut rays = Vec::new();
    for r in &lam.rays {
        let mut img = vec![0.0; n];
        for (gi, ri) in grads_x.iter().zip(r) {
            for (wj, gj) in img.iter_mut().zip(gi) {
                *wj += ri * gj;
            }
        }
        let norm: f64 = img.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 {
            rays.push(img.iter().map(|a| a / norm).collect());
        }
    }
    Ok(WSet { polytope: Polytope { dim: n, vertices, rays }, preimages })
}

/// One W component of the Theta estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaComponent {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub w: WSet,
    /// Thm-style invariance proxy: all Sigma vertices produced the same W
    /// vertex set (Hausdorff distance <= 1e-8).
    pub w_invariant_across_sigma: bool,
    pub sigma_guard_active: bool,
}

/// Upper estimate of the directional subdifferential of V: the union of W
/// polytopes over directional solutions, plus its convex hull (the stand-in
/// for the directional Clarke subdifferential).
#[derive(Debug, Clone, Serialize)]
pub struct SubdiffEstimate {
    pub direction: Vec<f64>,
    pub vprime: f64,
    pub components: Vec<ThetaComponent>,
    pub hull_vertices: Vec<Vec<f64>>,
    pub bounded: bool,
    pub hypotheses: Option<HypothesisReport>,
    pub notes: Vec<String>,
}

fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = |p: &Vec<f64>, q: &Vec<f64>| {
        p.iter()
            .zip(q)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let one_sided = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|p| to.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0_f64, f64::max)
    };
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY };
    }
    one_sided(a, b).max(one_sided(b, a))
}

pub fn theta_set(
    prog: &BilevelProgram,
    x_bar: &[f64],
    u: &[f64],
    dirsols: &DirectionalSolutionSet,
    cfg: &SensitivityConfig,
    hypotheses: Option<HypothesisReport>,
) -> Result<SubdiffEstimate, SensitivityError> {
    let dd = dderiv_lp(prog, x_bar, u, dirsols, cfg)?;
    let mut components = Vec::new();
    let mut notes = Vec::new();
    for inner in &dd.inner {
        // Sigma(x, y, u) is nonempty only where the inner problem attains
        // the global directional derivative
        let attains =
            (inner.dual_value - dd.value).abs() <= 1e-7_f64.max(1e-7 * dd.value.abs());
        if !attains {
            notes.push(format!(
                "solution {:?} does not attain V' ({} vs {}); no Theta component",
                inner.y, inner.dual_value, dd.value
            ));
            continue;
        }
        let sigma = sigma_set(prog, x_bar, &inner.y, u, cfg)?;
        let mut first: Option<WSet> = None;
        let mut invariant = true;
        for v in &sigma.vertices {
            let ws = w_set(prog, x_bar, &inner.y, u, v, cfg)?;
            match &first {
                None => first = Some(ws),
                Some(f0) => {
                    if hausdorff(&f0.polytope.vertices, &ws.polytope.vertices) > 1e-8 {
                        invariant = false;
                    }
                }
            }
        }
        let v0 = sigma.vertices.first().cloned().unwrap_or_default();
        let w = first.expect("sigma set always returns at least one direction");
        components.push(ThetaComponent {
            y: inner.y.clone(),
            v: v0,
            w,
            w_invariant_across_sigma: invariant,
            sigma_guard_active: sigma.guard_active,
        });
    }
    let bounded = components.iter().all(|c| c.w.polytope.bounded());
    let hull = if bounded {
        let all: Vec<Vec<f64>> = components
            .iter()
            .flat_map(|c| c.w.polytope.vertices.iter().cloned())
            .collect();
        hull_vertices(&all)?
    } else {
        notes.push("some W component is unbounded; hull omitted".to_string());
        Vec::new()
    };
    Ok(SubdiffEstimate {
        direction: u.to_vec(),
        vprime: dd.value,
        components,
        hull_vertices: hull,
        bounded,
        hypotheses,
        notes,
    })
}
