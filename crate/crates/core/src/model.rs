//! Bilevel-program data model: point evaluation with active sets,
//! directional-neighborhood geometry, and the linearization/critical cones
//! of the value-function reformulation.

use serde::Serialize;
use std::sync::Arc;

use crate::exprdsl::{EvalError, Expr};

/// A smooth bilevel program
///
/// ```text
/// min F(x,y)  s.t.  G(x,y) <= 0,  y solves  min_y f(x,y) s.t. g(x,y) <= 0
/// ```
///
/// with `x` in R^n and `y` in R^m. All expressions are immutable after
/// construction, so the program is freely shareable across threads.
#[derive(Debug, Clone)]
pub struct BilevelProgram {
    pub n: usize,
    pub m: usize,
    pub upper_objective: Expr,
    pub lower_objective: Expr,
    pub upper_constraints: Vec<Expr>,
    pub lower_constraints: Vec<Expr>,
    /// Per-coordinate search box for the lower-level solver.
    pub y_box: Option<Vec<(f64, f64)>>,
}

impl BilevelProgram {
    pub fn new(
        n: usize,
        m: usize,
        upper_objective: Expr,
        lower_objective: Expr,
        upper_constraints: Vec<Expr>,
        lower_constraints: Vec<Expr>,
        y_box: Option<Vec<(f64, f64)>>,
    ) -> Self {
        BilevelProgram {
            n,
            m,
            upper_objective,
            lower_objective,
            upper_constraints,
            lower_constraints,
            y_box,
        }
    }

    pub fn num_upper_constraints(&self) -> usize {
        self.upper_constraints.len()
    }

    pub fn num_lower_constraints(&self) -> usize {
        self.lower_constraints.len()
    }

    /// Lower-level feasibility `g(x,y) <= tol` componentwise. Domain errors
    /// count as infeasible.
    pub fn lower_feasible(&self, x: &[f64], y: &[f64], tol: f64) -> bool {
        self.lower_constraints
            .iter()
            .all(|g| matches!(g.eval(x, y), Ok(v) if v <= tol))
    }
}

/// All values, gradients and active sets of a program at a point.
#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub upper_value: f64,
    pub lower_value: f64,
    pub lower_con_values: Vec<f64>,
    pub upper_con_values: Vec<f64>,
    /// Gradients in R^{n+m}, x-block first.
    pub grad_upper: Vec<f64>,
    pub grad_lower: Vec<f64>,
    pub jac_lower_cons: Vec<Vec<f64>>,
    pub jac_upper_cons: Vec<Vec<f64>>,
    /// Indices (0-based) with |g_i| <= tol_act.
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub tol_act: f64,
    pub n: usize,
    pub m: usize,
}

impl FirstOrderData {
    pub fn x_block<'a>(&self, grad: &'a [f64]) -> &'a [f64] {
        &grad[..self.n]
    }

    pub fn y_block<'a>(&self, grad: &'a [f64]) -> &'a [f64] {
        &grad[self.n..]
    }

    pub fn is_lower_active(&self, i: usize) -> bool {
        self.active_lower.contains(&i)
    }

    pub fn is_upper_active(&self, i: usize) -> bool {
        self.active_upper.contains(&i)
    }
}

/// Evaluate values, gradients, and active sets at `(x, y)`.
pub fn first_order(
    prog: &BilevelProgram,
    x: &[f64],
    y: &[f64],
    tol_act: f64,
) -> Result<FirstOrderData, EvalError> {
    assert_eq!(x.len(), prog.n, "x has wrong dimension");
    assert_eq!(y.len(), prog.m, "y has wrong dimension");
    let fu = prog.upper_objective.eval_dual(x, y)?;
    let fl = prog.lower_objective.eval_dual(x, y)?;
    let mut lower_con_values = Vec::with_capacity(prog.num_lower_constraints());
    let mut jac_lower_cons = Vec::with_capacity(prog.num_lower_constraints());
    let mut active_lower = Vec::new();
    for (i, g) in prog.lower_constraints.iter().enumerate() {
        let d = g.eval_dual(x, y)?;
        if d.value.abs() <= tol_act {
            active_lower.push(i);
        }
        lower_con_values.push(d.value);
        jac_lower_cons.push(d.derivs);
    }
    let mut upper_con_values = Vec::with_capacity(prog.num_upper_constraints());
    let mut jac_upper_cons = Vec::with_capacity(prog.num_upper_constraints());
    let mut active_upper = Vec::new();
    for (i, g) in prog.upper_constraints.iter().enumerate() {
        let d = g.eval_dual(x, y)?;
        if d.value.abs() <= tol_act {
            active_upper.push(i);
        }
        upper_con_values.push(d.value);
        jac_upper_cons.push(d.derivs);
    }
    Ok(FirstOrderData {
        x: x.to_vec(),
        y: y.to_vec(),
        upper_value: fu.value,
        lower_value: fl.value,
        lower_con_values,
        upper_con_values,
        grad_upper: fu.derivs,
        grad_lower: fl.derivs,
        jac_lower_cons,
        jac_upper_cons,
        active_lower,
        active_upper,
        tol_act,
        n: prog.n,
        m: prog.m,
    })
}

/// Base point, direction, and sampling schedule for directional limits.
///
/// Samples are `base + t_k * d'` with `t_k = t0 * beta^k` and `d'` an
/// angular perturbation of `direction`.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionalContext {
    pub base: Vec<f64>,
    pub direction: Vec<f64>,
    /// Radius of the directional neighborhood.
    pub epsilon: f64,
    /// Angular aperture in (0, 2].
    pub delta: f64,
    pub t0: f64,
    pub beta: f64,
    pub count: usize,
}

impl DirectionalContext {
    pub fn new(base: Vec<f64>, direction: Vec<f64>) -> Self {
        DirectionalContext {
            base,
            direction,
            epsilon: 1.0,
            delta: 0.5,
            t0: 1e-1,
            beta: 0.5,
            count: 20,
        }
    }

    pub fn with_schedule(mut self, t0: f64, beta: f64, count: usize) -> Self {
        assert!(t0 > 0.0 && beta > 0.0 && beta < 1.0 && count > 0);
        self.t0 = t0;
        self.beta = beta;
        self.count = count;
        self
    }

    pub fn schedule(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.t0 * self.beta.powi(k as i32))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Membership in the directional neighborhood `base + V_{eps,delta}(d)`:
/// `z - base` lies in the open epsilon-ball and its angular defect from `d`
/// satisfies `|| ||d||(z-base) - ||z-base|| d || <= delta ||z-base|| ||d||`.
/// For `d = 0` the angular condition is vacuous and the set is the ball.
pub fn in_directional_neighborhood(z: &[f64], ctx: &DirectionalContext) -> bool {
    assert_eq!(z.len(), ctx.base.len());
    let w: Vec<f64> = z.iter().zip(&ctx.base).map(|(a, b)| a - b).collect();
    let wn = norm(&w);
    if wn >= ctx.epsilon {
        return false;
    }
    let d = &ctx.direction;
    let dn = norm(d);
    if dn == 0.0 || wn == 0.0 {
        return true;
    }
    let defect: f64 = w
        .iter()
        .zip(d)
        .map(|(wi, di)| {
            let t = dn * wi - wn * di;
            t * t
        })
        .sum::<f64>()
        .sqrt();
    defect <= ctx.delta * wn * dn
}

/// How the `f`-row of the cone is read: as the inequality
/// `grad f (u,v) <= V'(x;u)` or as a two-sided equality within `tol_row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FRowMode {
    Le,
    Eq,
}

/// Shared handle for the directional-derivative oracle `u -> V'(x;u)`.
pub type VPrimeFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConeRowKind {
    UpperObjective,
    LowerObjective,
    LowerConstraint(usize),
    UpperConstraint(usize),
}

/// One linear row `coeffs . (u,v) <= 0` of a cone description. The f-row is
/// special-cased because its right-hand side `V'(x;u)` is nonlinear in `u`.
#[derive(Debug, Clone, Serialize)]
pub struct ConeRow {
    pub kind: ConeRowKind,
    pub coeffs: Vec<f64>,
}

/// Cone at a feasible point of the reformulated problem: a membership
/// predicate plus the explicit list of defining rows. Rows are linear in
/// `(u,v)` except for the value-function row, which queries the supplied
/// `V'` oracle.
#[derive(Clone)]
pub struct ConeSpec {
    pub rows: Vec<ConeRow>,
    pub grad_lower: Vec<f64>,
    pub vprime: VPrimeFn,
    pub n: usize,
    pub frow_mode: FRowMode,
    pub tol_row: f64,
}

impl std::fmt::Debug for ConeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConeSpec")
            .field("rows", &self.rows)
            .field("grad_lower", &self.grad_lower)
            .field("n", &self.n)
            .field("frow_mode", &self.frow_mode)
            .field("tol_row", &self.tol_row)
            .finish()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Residual of one cone row at a direction; negative means strictly inside.
#[derive(Debug, Clone, Serialize)]
pub struct RowResidual {
    pub kind: ConeRowKind,
    pub value: f64,
    pub satisfied: bool,
}

impl ConeSpec {
    /// Residuals of every row at `dir = (u, v)`.
    pub fn residuals(&self, dir: &[f64]) -> Vec<RowResidual> {
        let u = &dir[..self.n];
        let mut out = Vec::with_capacity(self.rows.len() + 1);
        let f_res = dot(&self.grad_lower, dir) - (self.vprime)(u);
        out.push(RowResidual {
            kind: ConeRowKind::LowerObjective,
            value: f_res,
            satisfied: match self.frow_mode {
                FRowMode::Le => f_res <= self.tol_row,
                FRowMode::Eq => f_res.abs() <= self.tol_row,
            },
        });
        for row in &self.rows {
            let v = dot(&row.coeffs, dir);
            out.push(RowResidual { kind: row.kind, value: v, satisfied: v <= self.tol_row });
        }
        out
    }

    pub fn contains(&self, dir: &[f64]) -> bool {
        self.residuals(dir).iter().all(|r| r.satisfied)
    }
}

/// Linearization cone of the value-function reformulation at a point:
/// `{(u,v) : grad f(u,v) <= V'(x;u), grad g_i(u,v) <= 0 (i active),
/// grad G_i(u,v) <= 0 (i active)}`.
pub fn linearization_cone_vp(
    fod: &FirstOrderData,
    vprime: VPrimeFn,
    frow_mode: FRowMode,
    tol_row: f64,
) -> ConeSpec {
    let mut rows = Vec::new();
    for &i in &fod.active_lower {
        rows.push(ConeRow {
            kind: ConeRowKind::LowerConstraint(i),
            coeffs: fod.jac_lower_cons[i].clone(),
        });
    }
    for &i in &fod.active_upper {
        rows.push(ConeRow {
            kind: ConeRowKind::UpperConstraint(i),
            coeffs: fod.jac_upper_cons[i].clone(),
        });
    }
    ConeSpec {
        rows,
        grad_lower: fod.grad_lower.clone(),
        vprime,
        n: fod.n,
        frow_mode,
        tol_row,
    }
}

/// Critical cone: linearization cone intersected with
/// `{(u,v) : grad F(u,v) <= 0}`.
pub fn critical_cone_vp(
    fod: &FirstOrderData,
    vprime: VPrimeFn,
    frow_mode: FRowMode,
    tol_row: f64,
) -> ConeSpec {
    let mut cone = linearization_cone_vp(fod, vprime, frow_mode, tol_row);
    cone.rows.insert(
        0,
        ConeRow { kind: ConeRowKind::UpperObjective, coeffs: fod.grad_upper.clone() },
    );
    cone
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprdsl::parse_program;

    pub(crate) const EX31_TEXT: &str = "\
dims: n=1 m=1
F = (x1-y1-1)^(5/3)+4*(x1+y1+1)^(5/3)
f = -(x1+y1)^2+x1^3*(x1+y1-1)
G = [ -x1-1 ; x1-1 ]
g = [ -y1-x1-1 ; y1+x1-1 ]
box: y in [-3,3]^1
";

    pub(crate) const EX51_TEXT: &str = "\
dims: n=1 m=1
F = (sqrt(3)*x1-y1-sqrt(3))^2+x1+sqrt(3)*y1+3
f = 1-(x1-y1)^2
g = [ (x1-1)^2+y1^2-4 ; -sqrt(3)*x1-y1-sqrt(3) ]
box: y in [-3,3]^1
";

    fn sqrt3() -> f64 {
        3.0_f64.sqrt()
    }

    #[test]
    fn first_order_disk_instance_point() {
        let prog = parse_program(EX51_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-sqrt3()], 1e-8).unwrap();
        assert_eq!(fod.active_lower, vec![0, 1]);
        assert!((fod.jac_lower_cons[0][0] + 2.0).abs() < 1e-12);
        assert!((fod.jac_lower_cons[0][1] + 2.0 * sqrt3()).abs() < 1e-12);
        assert!((fod.jac_lower_cons[1][0] + sqrt3()).abs() < 1e-12);
        assert!((fod.jac_lower_cons[1][1] + 1.0).abs() < 1e-12);
        assert!((fod.grad_upper[0] - 1.0).abs() < 1e-12);
        assert!((fod.grad_upper[1] - sqrt3()).abs() < 1e-12);
        assert!((fod.grad_lower[0] + 2.0 * sqrt3()).abs() < 1e-12);
        assert!((fod.grad_lower[1] - 2.0 * sqrt3()).abs() < 1e-12);
    }

    #[test]
    fn first_order_nonsmooth_instance_point() {
        let prog = parse_program(EX31_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-1.0], 0.0).unwrap();
        assert_eq!(fod.active_lower, vec![0]);
        assert_eq!(fod.lower_con_values[1], -2.0);
        assert!(fod.active_upper.is_empty());
        // grad F vanishes at the point: both bases are exactly zero
        assert_eq!(fod.grad_upper, vec![0.0, 0.0]);
        assert_eq!(fod.grad_lower, vec![2.0, 2.0]);
    }

    #[test]
    fn no_constraints_no_active_sets() {
        let prog = parse_program("dims: n=1 m=1\nF = 0\nf = (y1-x1)^2\n").unwrap();
        let fod = first_order(&prog, &[0.3], &[0.3], 1e-8).unwrap();
        assert!(fod.active_lower.is_empty() && fod.active_upper.is_empty());
    }

    #[test]
    fn neighborhood_zero_direction_is_ball() {
        let ctx = DirectionalContext {
            base: vec![1.0, -1.0],
            direction: vec![0.0, 0.0],
            epsilon: 0.5,
            delta: 0.1,
            t0: 0.1,
            beta: 0.5,
            count: 5,
        };
        assert!(in_directional_neighborhood(&[1.2, -1.3], &ctx));
        assert!(!in_directional_neighborhood(&[1.6, -1.0], &ctx));
    }

    #[test]
    fn neighborhood_exact_ray_and_opposite() {
        let mut ctx = DirectionalContext::new(vec![0.0, 0.0], vec![1.0, -1.0]);
        ctx.epsilon = 1.0;
        ctx.delta = 0.3;
        // on the ray: zero angular defect
        assert!(in_directional_neighborhood(&[0.1, -0.1], &ctx));
        // opposite ray: defect equals 2||z|| ||d||, excluded for delta < 2
        assert!(!in_directional_neighborhood(&[-0.1, 0.1], &ctx));
        ctx.delta = 2.0;
        assert!(in_directional_neighborhood(&[-0.1, 0.1], &ctx));
    }

    #[test]
    fn critical_cone_nonsmooth_instance() {
        let prog = parse_program(EX31_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-1.0], 0.0).unwrap();
        // V'(0;u) = 0 for every u
        let vp: VPrimeFn = Arc::new(|_u: &[f64]| 0.0);
        let cone = critical_cone_vp(&fod, vp, FRowMode::Le, 1e-9);
        assert!(cone.contains(&[1.0, -1.0]));
        assert!(cone.contains(&[-1.0, 1.0]));
        assert!(!cone.contains(&[1.0, 0.0]));
        assert!(cone.contains(&[0.0, 0.0]));
    }

    #[test]
    fn critical_cone_disk_instance() {
        let prog = parse_program(EX51_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-sqrt3()], 1e-8).unwrap();
        let vp: VPrimeFn = Arc::new(|u: &[f64]| {
            if u[0] >= 0.0 {
                -(2.0 * sqrt3() + 2.0) * u[0]
            } else {
                (2.0 * sqrt3() - 2.0) * u[0]
            }
        });
        let cone = critical_cone_vp(&fod, vp.clone(), FRowMode::Le, 1e-9);
        assert!(cone.contains(&[sqrt3(), -1.0]));
        assert!(!cone.contains(&[-sqrt3(), 1.0]));
        // eq reading agrees here
        let cone_eq = critical_cone_vp(&fod, vp, FRowMode::Eq, 1e-9);
        assert!(cone_eq.contains(&[sqrt3(), -1.0]));
    }

    #[test]
    fn linearization_cone_membership() {
        let prog = parse_program(EX31_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-1.0], 0.0).unwrap();
        let vp: VPrimeFn = Arc::new(|_u: &[f64]| 0.0);
        let lin = linearization_cone_vp(&fod, vp, FRowMode::Le, 1e-9);
        // both worked directions satisfy the f-row with equality
        assert!(lin.contains(&[1.0, -1.0]));
        assert!(lin.contains(&[-1.0, 1.0]));
        // no active constraints: only the f-row remains
        let free = parse_program("dims: n=1 m=1\nF = 0\nf = x1+2*y1\n").unwrap();
        let fod = first_order(&free, &[0.0], &[0.0], 1e-8).unwrap();
        let vp: VPrimeFn = Arc::new(|u: &[f64]| 3.0 * u[0]);
        let lin = linearization_cone_vp(&fod, vp, FRowMode::Le, 1e-9);
        // grad f (u,v) = u + 2v <= 3u
        assert!(lin.contains(&[1.0, 1.0]));
        assert!(!lin.contains(&[0.0, 1.0]));
    }

    #[test]
    fn critical_subset_of_linearization_on_random_directions() {
        let prog = parse_program(EX51_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-sqrt3()], 1e-8).unwrap();
        let vp: VPrimeFn = Arc::new(|u: &[f64]| -(2.0 * sqrt3() + 2.0) * u[0].max(0.0));
        let lin = linearization_cone_vp(&fod, vp.clone(), FRowMode::Le, 1e-9);
        let crit = critical_cone_vp(&fod, vp, FRowMode::Le, 1e-9);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if crit.contains(&d) {
                assert!(lin.contains(&d));
            }
        }
    }
}
