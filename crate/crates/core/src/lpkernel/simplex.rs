//! Two-phase dense simplex over a [`Polyhedron`] with free variables.
//!
//! Free variables are split into positive and negative parts and every
//! inequality gets a slack, so the tableau is roughly `(me+mi) x (2r+mi)`.
//! Bland's rule keeps the iteration finite; a step cap guards against
//! numerical cycling anyway.

use super::{LpError, Polyhedron, TOL_FEAS, TOL_OPT};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver outcome. On `Optimal`, `point` is primal feasible within
/// `TOL_FEAS` and `(dual_eq, dual_ineq)` certify optimality:
/// `objective = A_eq^T dual_eq + A_in^T dual_ineq` with `dual_ineq <= 0`
/// for `Min` (`>= 0` for `Max`) and `value = b_eq . dual_eq + b_in . dual_ineq`.
/// On `Unbounded`, `ray` is an improving recession direction.
#[derive(Debug, Clone, Serialize)]
pub struct LpResult {
    pub status: LpStatus,
    pub value: f64,
    pub point: Vec<f64>,
    pub ray: Option<Vec<f64>>,
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
}

impl LpResult {
    fn of_status(status: LpStatus) -> Self {
        LpResult {
            status,
            value: f64::NAN,
            point: Vec::new(),
            ray: None,
            dual_eq: Vec::new(),
            dual_ineq: Vec::new(),
        }
    }
}

struct Tableau {
    /// rows x cols coefficient matrix, plus rhs column.
    a: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    /// objective row (reduced costs), plus objective constant in `obj_rhs`.
    obj: Vec<f64>,
    obj_rhs: f64,
    basis: Vec<usize>,
    ncols: usize,
    /// columns >= art_start are phase-1 artificials.
    art_start: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.a[row][col];
        for j in 0..self.ncols {
            self.a[row][j] /= piv;
        }
        self.rhs[row] /= piv;
        for i in 0..self.a.len() {
            if i == row {
                continue;
            }
            let f = self.a[i][col];
            if f != 0.0 {
                for j in 0..self.ncols {
                    self.a[i][j] -= f * self.a[row][j];
                }
                self.rhs[i] -= f * self.rhs[row];
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for j in 0..self.ncols {
                self.obj[j] -= f * self.a[row][j];
            }
            self.obj_rhs -= f * self.rhs[row];
        }
        self.basis[row] = col;
    }

    /// Bland's rule: entering = lowest-index column with reduced cost below
    /// -TOL_OPT; leaving = smallest ratio, ties by lowest basis index.
    /// Returns Ok(true) if a pivot happened, Ok(false) at optimality, and
    /// Err(col) when the entering column proves unboundedness.
    fn bland_step(&mut self, allow_artificial: bool) -> Result<bool, usize> {
        let limit = if allow_artificial { self.ncols } else { self.art_start };
        let Some(col) = (0..limit).find(|&j| self.obj[j] < -TOL_OPT) else {
            return Ok(false);
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..self.a.len() {
            if self.a[i][col] > TOL_OPT {
                let ratio = self.rhs[i] / self.a[i][col];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - 1e-15
                            || ((ratio - best_ratio).abs() <= 1e-15 && self.basis[i] < self.basis[l])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        match leave {
            Some(row) => {
                self.pivot(row, col);
                Ok(true)
            }
            None => Err(col),
        }
    }
}

const MAX_PIVOTS: usize = 20_000;

/// Solve `min/max objective . lambda` over `poly`.
pub fn solve_lp(poly: &Polyhedron, objective: &[f64], sense: Sense) -> Result<LpResult, LpError> {
    assert_eq!(objective.len(), poly.dim, "objective has wrong dimension");
    poly.check_shapes();
    let r = poly.dim;
    let me = poly.a_eq.len();
    let mi = poly.a_in.len();

    // dimension-zero polyhedra: feasibility is a sign check
    if r == 0 {
        let feasible = poly.b_eq.iter().all(|b| b.abs() <= TOL_FEAS)
            && poly.b_in.iter().all(|d| *d >= -TOL_FEAS);
        return Ok(if feasible {
            LpResult {
                status: LpStatus::Optimal,
                value: 0.0,
                point: Vec::new(),
                ray: None,
                dual_eq: vec![0.0; me],
                dual_ineq: vec![0.0; mi],
            }
        } else {
            LpResult::of_status(LpStatus::Infeasible)
        });
    }

    // standard form columns: lambda+ (r), lambda- (r), slacks (mi), artificials (me+mi)
    let nrows = me + mi;
    let nstruct = 2 * r + mi;
    let ncols = nstruct + nrows;
    let mut a = vec![vec![0.0; ncols]; nrows];
    let mut rhs = vec![0.0; nrows];
    let mut flip = vec![1.0; nrows];
    for (i, (row, &b)) in poly.a_eq.iter().zip(&poly.b_eq).enumerate() {
        let s = if b < 0.0 { -1.0 } else { 1.0 };
        flip[i] = s;
        for j in 0..r {
            a[i][j] = s * row[j];
            a[i][r + j] = -s * row[j];
        }
        rhs[i] = s * b;
    }
    for (k, (row, &d)) in poly.a_in.iter().zip(&poly.b_in).enumerate() {
        let i = me + k;
        let s = if d < 0.0 { -1.0 } else { 1.0 };
        flip[i] = s;
        for j in 0..r {
            a[i][j] = s * row[j];
            a[i][r + j] = -s * row[j];
        }
        a[i][2 * r + k] = s; // slack
        rhs[i] = s * d;
    }
    for i in 0..nrows {
        a[i][nstruct + i] = 1.0;
    }

    // phase 1: minimize the artificial sum
    let mut obj = vec![0.0; ncols];
    for j in nstruct..ncols {
        obj[j] = 1.0;
    }
    let mut t = Tableau {
        a,
        rhs,
        obj,
        obj_rhs: 0.0,
        basis: (nstruct..ncols).collect(),
        ncols,
        art_start: nstruct,
    };
    // price out the initial basis
    for i in 0..nrows {
        for j in 0..ncols {
            t.obj[j] -= t.a[i][j];
        }
        t.obj_rhs -= t.rhs[i];
    }
    let mut pivots = 0;
    loop {
        match t.bland_step(true) {
            Ok(true) => {
                pivots += 1;
                if pivots > MAX_PIVOTS {
                    return Err(LpError::NumericalFailure("phase-1 pivot cap exceeded"));
                }
            }
            Ok(false) => break,
            Err(_) => return Err(LpError::NumericalFailure("phase 1 reported unbounded")),
        }
    }
    let phase1_value = -t.obj_rhs;
    if phase1_value > TOL_FEAS {
        return Ok(LpResult::of_status(LpStatus::Infeasible));
    }
    // drive remaining artificials out of the basis where possible
    for i in 0..nrows {
        if t.basis[i] >= nstruct {
            if let Some(col) = (0..nstruct).find(|&j| t.a[i][j].abs() > 1e-9) {
                t.pivot(i, col);
            }
            // otherwise the row is redundant; its artificial stays basic at 0
        }
    }

    // phase 2
    let sign = match sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    t.obj = vec![0.0; ncols];
    for j in 0..r {
        t.obj[j] = sign * objective[j];
        t.obj[r + j] = -sign * objective[j];
    }
    t.obj_rhs = 0.0;
    for i in 0..nrows {
        let b = t.basis[i];
        let cb = t.obj[b];
        if cb != 0.0 {
            for j in 0..ncols {
                t.obj[j] -= cb * t.a[i][j];
            }
            t.obj_rhs -= cb * t.rhs[i];
        }
    }
    let unbounded_col = loop {
        match t.bland_step(false) {
            Ok(true) => {
                pivots += 1;
                if pivots > MAX_PIVOTS {
                    return Err(LpError::NumericalFailure("phase-2 pivot cap exceeded"));
                }
            }
            Ok(false) => break None,
            Err(col) => break Some(col),
        }
    };

    let point = extract_point(&t, r);
    if let Some(col) = unbounded_col {
        // improving ray in the original variables
        let mut dir_std = vec![0.0; t.ncols];
        dir_std[col] = 1.0;
        for i in 0..nrows {
            dir_std[t.basis[i]] = -t.a[i][col];
        }
        let ray: Vec<f64> = (0..r).map(|j| dir_std[j] - dir_std[r + j]).collect();
        let mut res = LpResult::of_status(LpStatus::Unbounded);
        res.point = point;
        res.ray = Some(ray);
        return Ok(res);
    }

    // duals off the artificial columns of the final objective row
    let mut dual_eq = vec![0.0; me];
    let mut dual_ineq = vec![0.0; mi];
    for i in 0..nrows {
        let y = -t.obj[nstruct + i] * flip[i] * sign;
        if i < me {
            dual_eq[i] = y;
        } else {
            dual_ineq[i - me] = y;
        }
    }
    let value: f64 = objective.iter().zip(&point).map(|(c, x)| c * x).sum();
    let result = LpResult {
        status: LpStatus::Optimal,
        value,
        point,
        ray: None,
        dual_eq,
        dual_ineq,
    };
    verify_optimal(poly, objective, sense, &result)?;
    Ok(result)
}

fn extract_point(t: &Tableau, r: usize) -> Vec<f64> {
    let mut std = vec![0.0; t.ncols];
    for (i, &b) in t.basis.iter().enumerate() {
        std[b] = t.rhs[i];
    }
    (0..r).map(|j| std[j] - std[r + j]).collect()
}

/// Internal certificate check run before any Optimal result is returned:
/// primal feasibility, dual sign, stationarity, and strong duality.
fn verify_optimal(
    poly: &Polyhedron,
    objective: &[f64],
    sense: Sense,
    res: &LpResult,
) -> Result<(), LpError> {
    let scale = 1.0 + res.point.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let viol = poly.max_violation(&res.point);
    if viol > TOL_FEAS * scale * 10.0 {
        return Err(LpError::NumericalFailure("optimal point fails feasibility recheck"));
    }
    let dual_sign = match sense {
        Sense::Min => -1.0,
        Sense::Max => 1.0,
    };
    let dual_scale = 1.0
        + res
            .dual_eq
            .iter()
            .chain(res.dual_ineq.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
    for &w in &res.dual_ineq {
        if w * dual_sign < -1e-7 * dual_scale {
            return Err(LpError::NumericalFailure("dual sign violated"));
        }
    }
    for j in 0..poly.dim {
        let mut lhs = 0.0;
        for (row, &y) in poly.a_eq.iter().zip(&res.dual_eq) {
            lhs += row[j] * y;
        }
        for (row, &y) in poly.a_in.iter().zip(&res.dual_ineq) {
            lhs += row[j] * y;
        }
        if (lhs - objective[j]).abs() > 1e-6 * dual_scale.max(scale) {
            return Err(LpError::NumericalFailure("dual stationarity violated"));
        }
    }
    let dual_value: f64 = poly.b_eq.iter().zip(&res.dual_eq).map(|(b, y)| b * y).sum::<f64>()
        + poly.b_in.iter().zip(&res.dual_ineq).map(|(d, y)| d * y).sum::<f64>();
    if (dual_value - res.value).abs() > 1e-6 * scale.max(dual_scale) {
        return Err(LpError::NumericalFailure("strong duality gap"));
    }
    Ok(())
}

/// A point satisfying every row within `TOL_FEAS`, if one exists
/// (phase-1 simplex).
pub fn feasible_point(poly: &Polyhedron) -> Result<Option<Vec<f64>>, LpError> {
    let zero = vec![0.0; poly.dim];
    let res = solve_lp(poly, &zero, Sense::Min)?;
    Ok(match res.status {
        LpStatus::Optimal => Some(res.point),
        _ => None,
    })
}
