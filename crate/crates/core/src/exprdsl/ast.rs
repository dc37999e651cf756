//! Expression trees for problem data and their evaluation.
//!
//! Expressions are immutable after construction; `eval` and `eval_dual` are
//! pure, so a parsed program can be shared across threads freely.

use serde::Serialize;
use std::fmt;

use super::EvalError;

/// Which variable block an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarKind {
    X,
    Y,
}

/// Source position (1-based) kept on nodes that can fail at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SrcLoc {
    pub line: u32,
    pub col: u32,
}

impl SrcLoc {
    pub fn new(line: u32, col: u32) -> Self {
        SrcLoc { line, col }
    }
}

impl fmt::Display for SrcLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
}

impl UnaryFn {
    pub fn name(&self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
            UnaryFn::Log => "log",
            UnaryFn::Abs => "abs",
        }
    }
}

/// Expression tree over variables `x1..xn`, `y1..ym`.
///
/// `Pow` exponents are rational `num/den` in lowest terms with `den >= 1`.
/// On negative bases with odd `den` the real signed root is used, so
/// `(x-y-1)^(5/3)` is defined on all of the plane.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// 1-based index into the x or y block.
    Var { kind: VarKind, index: usize },
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>, SrcLoc),
    Neg(Box<Expr>),
    Pow { base: Box<Expr>, num: i64, den: i64, loc: SrcLoc },
    Sqrt(Box<Expr>, SrcLoc),
    Unary { func: UnaryFn, arg: Box<Expr>, loc: SrcLoc },
}

/// Value and full first derivative of an expression at a point.
///
/// `derivs` is laid out as (d/dx1 .. d/dxn, d/dy1 .. d/dym). `kink` is set
/// when the derivative of `abs` (or a fractional power with exponent < 1)
/// was requested exactly at its kink; the reported derivative there is 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualValue {
    pub value: f64,
    pub derivs: Vec<f64>,
    pub kink: bool,
}

impl DualValue {
    fn constant(value: f64, width: usize) -> Self {
        DualValue { value, derivs: vec![0.0; width], kink: false }
    }
}

/// Real signed power: for odd `den`, `t^(num/den)` extended to negative `t`
/// by `sign(t)^num * |t|^(num/den)`.
pub(crate) fn signed_pow(t: f64, num: i64, den: i64, loc: SrcLoc) -> Result<f64, EvalError> {
    debug_assert!(den >= 1);
    if den == 1 {
        if t == 0.0 && num < 0 {
            return Err(EvalError::DivisionByZero { loc });
        }
        // powi takes i32; exponents here are tiny literals.
        return Ok(t.powi(num as i32));
    }
    let e = num as f64 / den as f64;
    if t >= 0.0 {
        if t == 0.0 && num < 0 {
            return Err(EvalError::DivisionByZero { loc });
        }
        Ok(t.powf(e))
    } else if den % 2 == 1 {
        let mag = (-t).powf(e);
        Ok(if num % 2 == 0 { mag } else { -mag })
    } else {
        Err(EvalError::EvenRootOfNegative { loc })
    }
}

impl Expr {
    /// Evaluate at `(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var { kind, index } => Ok(match kind {
                VarKind::X => x[index - 1],
                VarKind::Y => y[index - 1],
            }),
            Expr::Add(a, b) => Ok(a.eval(x, y)? + b.eval(x, y)?),
            Expr::Sub(a, b) => Ok(a.eval(x, y)? - b.eval(x, y)?),
            Expr::Mul(a, b) => Ok(a.eval(x, y)? * b.eval(x, y)?),
            Expr::Div(a, b, loc) => {
                let d = b.eval(x, y)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero { loc: *loc });
                }
                Ok(a.eval(x, y)? / d)
            }
            Expr::Neg(a) => Ok(-a.eval(x, y)?),
            Expr::Pow { base, num, den, loc } => signed_pow(base.eval(x, y)?, *num, *den, *loc),
            Expr::Sqrt(a, loc) => {
                let v = a.eval(x, y)?;
                if v < 0.0 {
                    return Err(EvalError::EvenRootOfNegative { loc: *loc });
                }
                Ok(v.sqrt())
            }
            Expr::Unary { func, arg, loc } => {
                let v = arg.eval(x, y)?;
                match func {
                    UnaryFn::Sin => Ok(v.sin()),
                    UnaryFn::Cos => Ok(v.cos()),
                    UnaryFn::Exp => Ok(v.exp()),
                    UnaryFn::Log => {
                        if v <= 0.0 {
                            Err(EvalError::LogNonPositive { loc: *loc, value: v })
                        } else {
                            Ok(v.ln())
                        }
                    }
                    UnaryFn::Abs => Ok(v.abs()),
                }
            }
        }
    }

    /// Forward-mode evaluation: value plus the gradient w.r.t. all of
    /// `(x, y)`. Matches symbolic differentiation exactly on polynomials.
    pub fn eval_dual(&self, x: &[f64], y: &[f64]) -> Result<DualValue, EvalError> {
        let width = x.len() + y.len();
        match self {
            Expr::Const(c) => Ok(DualValue::constant(*c, width)),
            Expr::Var { kind, index } => {
                let (value, seed) = match kind {
                    VarKind::X => (x[index - 1], index - 1),
                    VarKind::Y => (y[index - 1], x.len() + index - 1),
                };
                let mut derivs = vec![0.0; width];
                derivs[seed] = 1.0;
                Ok(DualValue { value, derivs, kink: false })
            }
            Expr::Add(a, b) => {
                let (mut a, b) = (a.eval_dual(x, y)?, b.eval_dual(x, y)?);
                a.value += b.value;
                for (da, db) in a.derivs.iter_mut().zip(&b.derivs) {
                    *da += db;
                }
                a.kink |= b.kink;
                Ok(a)
            }
            Expr::Sub(a, b) => {
                let (mut a, b) = (a.eval_dual(x, y)?, b.eval_dual(x, y)?);
                a.value -= b.value;
                for (da, db) in a.derivs.iter_mut().zip(&b.derivs) {
                    *da -= db;
                }
                a.kink |= b.kink;
                Ok(a)
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.eval_dual(x, y)?, b.eval_dual(x, y)?);
                let derivs = a
                    .derivs
                    .iter()
                    .zip(&b.derivs)
                    .map(|(da, db)| da * b.value + a.value * db)
                    .collect();
                Ok(DualValue { value: a.value * b.value, derivs, kink: a.kink || b.kink })
            }
            Expr::Div(a, b, loc) => {
                let (a, b) = (a.eval_dual(x, y)?, b.eval_dual(x, y)?);
                if b.value == 0.0 {
                    return Err(EvalError::DivisionByZero { loc: *loc });
                }
                let derivs = a
                    .derivs
                    .iter()
                    .zip(&b.derivs)
                    .map(|(da, db)| (da * b.value - a.value * db) / (b.value * b.value))
                    .collect();
                Ok(DualValue { value: a.value / b.value, derivs, kink: a.kink || b.kink })
            }
            Expr::Neg(a) => {
                let mut a = a.eval_dual(x, y)?;
                a.value = -a.value;
                for d in a.derivs.iter_mut() {
                    *d = -*d;
                }
                Ok(a)
            }
            Expr::Pow { base, num, den, loc } => {
                let b = base.eval_dual(x, y)?;
                let value = signed_pow(b.value, *num, *den, *loc)?;
                let e = *num as f64 / *den as f64;
                // d/dt t^e = e * t^(e-1), with the inner power taken
                // sign-preservingly; exponent e-1 = (num-den)/den.
                let mut kink = b.kink;
                let slope = if b.value == 0.0 {
                    if *num == *den {
                        1.0
                    } else if e > 1.0 {
                        0.0
                    } else {
                        kink = true;
                        0.0
                    }
                } else {
                    e * signed_pow(b.value, num - den, *den, *loc)?
                };
                let derivs = b.derivs.iter().map(|d| slope * d).collect();
                Ok(DualValue { value, derivs, kink })
            }
            Expr::Sqrt(a, loc) => {
                let a = a.eval_dual(x, y)?;
                if a.value < 0.0 {
                    return Err(EvalError::EvenRootOfNegative { loc: *loc });
                }
                let value = a.value.sqrt();
                let mut kink = a.kink;
                let slope = if a.value == 0.0 {
                    kink = true;
                    0.0
                } else {
                    0.5 / value
                };
                let derivs = a.derivs.iter().map(|d| slope * d).collect();
                Ok(DualValue { value, derivs, kink })
            }
            Expr::Unary { func, arg, loc } => {
                let a = arg.eval_dual(x, y)?;
                let (value, slope, kink_here) = match func {
                    UnaryFn::Sin => (a.value.sin(), a.value.cos(), false),
                    UnaryFn::Cos => (a.value.cos(), -a.value.sin(), false),
                    UnaryFn::Exp => {
                        let e = a.value.exp();
                        (e, e, false)
                    }
                    UnaryFn::Log => {
                        if a.value <= 0.0 {
                            return Err(EvalError::LogNonPositive { loc: *loc, value: a.value });
                        }
                        (a.value.ln(), 1.0 / a.value, false)
                    }
                    UnaryFn::Abs => {
                        if a.value == 0.0 {
                            (0.0, 0.0, true)
                        } else {
                            (a.value.abs(), a.value.signum(), false)
                        }
                    }
                };
                let derivs = a.derivs.iter().map(|d| slope * d).collect();
                Ok(DualValue { value, derivs, kink: a.kink || kink_here })
            }
        }
    }

    /// Structural equality ignoring source locations.
    pub fn structurally_equal(&self, other: &Expr) -> bool {
        use Expr::*;
        match (self, other) {
            (Const(x), Const(y)) => x == y,
            (Var { kind: k1, index: i1 }, Var { kind: k2, index: i2 }) => k1 == k2 && i1 == i2,
            (Add(a1, b1), Add(a2, b2))
            | (Sub(a1, b1), Sub(a2, b2))
            | (Mul(a1, b1), Mul(a2, b2))
            | (Div(a1, b1, _), Div(a2, b2, _)) => {
                a1.structurally_equal(a2) && b1.structurally_equal(b2)
            }
            (Neg(a1), Neg(a2)) | (Sqrt(a1, _), Sqrt(a2, _)) => a1.structurally_equal(a2),
            (Pow { base: b1, num: n1, den: d1, .. }, Pow { base: b2, num: n2, den: d2, .. }) => {
                n1 == n2 && d1 == d2 && b1.structurally_equal(b2)
            }
            (Unary { func: f1, arg: a1, .. }, Unary { func: f2, arg: a2, .. }) => {
                f1 == f2 && a1.structurally_equal(a2)
            }
            _ => false,
        }
    }

    /// Distance (in argument value) to the nearest kink or domain edge of
    /// any nonsmooth node at the given point: abs/sqrt and fractional
    /// powers kink where their argument vanishes, log and division where
    /// the argument or denominator vanishes. Infinity when the expression
    /// is smooth at the point; `None` on evaluation errors.
    pub fn kink_distance(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let mut dist = f64::INFINITY;
        self.kink_walk(x, y, &mut dist)?;
        Some(dist)
    }

    fn kink_walk(&self, x: &[f64], y: &[f64], dist: &mut f64) -> Option<f64> {
        Some(match self {
            Expr::Const(c) => *c,
            Expr::Var { kind, index } => match kind {
                VarKind::X => x[index - 1],
                VarKind::Y => y[index - 1],
            },
            Expr::Add(a, b) => a.kink_walk(x, y, dist)? + b.kink_walk(x, y, dist)?,
            Expr::Sub(a, b) => a.kink_walk(x, y, dist)? - b.kink_walk(x, y, dist)?,
            Expr::Mul(a, b) => a.kink_walk(x, y, dist)? * b.kink_walk(x, y, dist)?,
            Expr::Div(a, b, _) => {
                let d = b.kink_walk(x, y, dist)?;
                *dist = dist.min(d.abs());
                if d == 0.0 {
                    return None;
                }
                a.kink_walk(x, y, dist)? / d
            }
            Expr::Neg(a) => -a.kink_walk(x, y, dist)?,
            Expr::Pow { base, num, den, loc } => {
                let b = base.kink_walk(x, y, dist)?;
                if *den > 1 || *num < 0 {
                    *dist = dist.min(b.abs());
                }
                signed_pow(b, *num, *den, *loc).ok()?
            }
            Expr::Sqrt(a, _) => {
                let v = a.kink_walk(x, y, dist)?;
                *dist = dist.min(v.abs());
                if v < 0.0 {
                    return None;
                }
                v.sqrt()
            }
            Expr::Unary { func, arg, .. } => {
                let v = arg.kink_walk(x, y, dist)?;
                match func {
                    UnaryFn::Sin => v.sin(),
                    UnaryFn::Cos => v.cos(),
                    UnaryFn::Exp => v.exp(),
                    UnaryFn::Log => {
                        *dist = dist.min(v.abs());
                        if v <= 0.0 {
                            return None;
                        }
                        v.ln()
                    }
                    UnaryFn::Abs => {
                        *dist = dist.min(v.abs());
                        v.abs()
                    }
                }
            }
        })
    }

    /// Largest variable index used per block, as `(max_x, max_y)`.
    pub fn max_indices(&self) -> (usize, usize) {
        fn walk(e: &Expr, mx: &mut usize, my: &mut usize) {
            match e {
                Expr::Const(_) => {}
                Expr::Var { kind, index } => match kind {
                    VarKind::X => *mx = (*mx).max(*index),
                    VarKind::Y => *my = (*my).max(*index),
                },
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b, _) => {
                    walk(a, mx, my);
                    walk(b, mx, my);
                }
                Expr::Neg(a) | Expr::Pow { base: a, .. } | Expr::Sqrt(a, _) | Expr::Unary { arg: a, .. } => {
                    walk(a, mx, my)
                }
            }
        }
        let (mut mx, mut my) = (0, 0);
        walk(self, &mut mx, &mut my);
        (mx, my)
    }

    /// Upper bound on the polynomial degree, `None` when the expression is
    /// not polynomial (division by a non-constant, transcendental of a
    /// non-constant argument, fractional or negative powers).
    pub fn poly_degree(&self) -> Option<u32> {
        match self {
            Expr::Const(_) => Some(0),
            Expr::Var { .. } => Some(1),
            Expr::Add(a, b) | Expr::Sub(a, b) => Some(a.poly_degree()?.max(b.poly_degree()?)),
            Expr::Mul(a, b) => Some(a.poly_degree()? + b.poly_degree()?),
            Expr::Div(a, b, _) => {
                if b.poly_degree()? == 0 {
                    a.poly_degree()
                } else {
                    None
                }
            }
            Expr::Neg(a) => a.poly_degree(),
            Expr::Pow { base, num, den, .. } => {
                let d = base.poly_degree()?;
                if *den == 1 && *num >= 0 {
                    Some(d * *num as u32)
                } else if d == 0 {
                    Some(0)
                } else {
                    None
                }
            }
            Expr::Sqrt(a, _) | Expr::Unary { arg: a, .. } => {
                if a.poly_degree()? == 0 {
                    Some(0)
                } else {
                    None
                }
            }
        }
    }

    /// True when the expression is affine in `(x, y)`.
    pub fn is_affine(&self) -> bool {
        matches!(self.poly_degree(), Some(d) if d <= 1)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow { .. } => 4,
            _ => 5,
        }
    }
}

/// Canonical text form; `parse` of the output reproduces the tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "(")?;
                fmt::Display::fmt(e, f)?;
                write!(f, ")")
            } else {
                fmt::Display::fmt(e, f)
            }
        }
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({})", c)
                } else {
                    write!(f, "{}", c)
                }
            }
            Expr::Var { kind, index } => match kind {
                VarKind::X => write!(f, "x{}", index),
                VarKind::Y => write!(f, "y{}", index),
            },
            Expr::Add(a, b) => {
                child(f, a, 1)?;
                write!(f, "+")?;
                child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                child(f, a, 1)?;
                write!(f, "-")?;
                child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                child(f, a, 2)?;
                write!(f, "*")?;
                child(f, b, 3)
            }
            Expr::Div(a, b, _) => {
                child(f, a, 2)?;
                write!(f, "/")?;
                child(f, b, 3)
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                child(f, a, 3)
            }
            Expr::Pow { base, num, den, .. } => {
                child(f, base, 5)?;
                if *den == 1 && *num >= 0 {
                    write!(f, "^{}", num)
                } else {
                    write!(f, "^({}/{})", num, den)
                }
            }
            Expr::Sqrt(a, _) => write!(f, "sqrt({})", a),
            Expr::Unary { func, arg, .. } => write!(f, "{}({})", func.name(), arg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc() -> SrcLoc {
        SrcLoc::new(1, 1)
    }

    fn x1() -> Expr {
        Expr::Var { kind: VarKind::X, index: 1 }
    }

    fn y1() -> Expr {
        Expr::Var { kind: VarKind::Y, index: 1 }
    }

    #[test]
    fn signed_pow_odd_denominator() {
        // (-2)^(5/3) = -2^(5/3)
        let v = signed_pow(-2.0, 5, 3, loc()).unwrap();
        assert!((v + 2.0_f64.powf(5.0 / 3.0)).abs() < 1e-12);
        // even numerator keeps the sign positive
        let v = signed_pow(-8.0, 2, 3, loc()).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn eval_example_objective_at_sequence_point() {
        // (x1-y1-1)^(5/3) at x=-1, y=0: base = -2
        let e = Expr::Pow {
            base: Box::new(Expr::Sub(
                Box::new(Expr::Sub(Box::new(x1()), Box::new(y1()))),
                Box::new(Expr::Const(1.0)),
            )),
            num: 5,
            den: 3,
            loc: loc(),
        };
        let v = e.eval(&[-1.0], &[0.0]).unwrap();
        assert!((v + 2.0_f64.powf(5.0 / 3.0)).abs() < 1e-12);
        assert!((v + 3.17480210393640).abs() < 1e-10);
    }

    #[test]
    fn eval_sqrt_circle() {
        // sqrt(4-(x1-1)^2) at x=0 -> sqrt(3)? no: 4-1=3 ... the solution
        // branch of the disk instance uses sqrt(4-(x-1)^2); at x=0 it is
        // sqrt(3). At x=1 it is 2.
        let e = Expr::Sqrt(
            Box::new(Expr::Sub(
                Box::new(Expr::Const(4.0)),
                Box::new(Expr::Pow {
                    base: Box::new(Expr::Sub(Box::new(x1()), Box::new(Expr::Const(1.0)))),
                    num: 2,
                    den: 1,
                    loc: loc(),
                }),
            )),
            loc(),
        );
        assert!((e.eval(&[1.0], &[]).unwrap() - 2.0).abs() < 1e-15);
        assert!((e.eval(&[0.0], &[]).unwrap() - 3.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dual_gradient_of_constant_is_zero() {
        let d = Expr::Const(7.5).eval_dual(&[1.0, 2.0], &[3.0]).unwrap();
        assert_eq!(d.value, 7.5);
        assert_eq!(d.derivs, vec![0.0; 3]);
        assert!(!d.kink);
    }

    #[test]
    fn dual_matches_symbolic_on_polynomial() {
        // f = x1^2*y1 + 3*x1 : df/dx1 = 2x1 y1 + 3, df/dy1 = x1^2
        let e = Expr::Add(
            Box::new(Expr::Mul(
                Box::new(Expr::Pow { base: Box::new(x1()), num: 2, den: 1, loc: loc() }),
                Box::new(y1()),
            )),
            Box::new(Expr::Mul(Box::new(Expr::Const(3.0)), Box::new(x1()))),
        );
        let d = e.eval_dual(&[2.0], &[5.0]).unwrap();
        assert_eq!(d.value, 4.0 * 5.0 + 6.0);
        assert_eq!(d.derivs, vec![2.0 * 2.0 * 5.0 + 3.0, 4.0]);
    }

    #[test]
    fn abs_kink_reports_flag_and_zero() {
        let e = Expr::Unary { func: UnaryFn::Abs, arg: Box::new(x1()), loc: loc() };
        let d = e.eval_dual(&[0.0], &[]).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.derivs, vec![0.0]);
        assert!(d.kink);
        let d = e.eval_dual(&[-2.0], &[]).unwrap();
        assert_eq!((d.value, d.derivs[0], d.kink), (2.0, -1.0, false));
    }

    #[test]
    fn fractional_power_gradient_vanishes_at_zero_base() {
        // d/dt t^(5/3) = (5/3) t^(2/3) -> 0 at t=0, no kink (exponent > 1)
        let e = Expr::Pow { base: Box::new(x1()), num: 5, den: 3, loc: loc() };
        let d = e.eval_dual(&[0.0], &[]).unwrap();
        assert_eq!(d.derivs, vec![0.0]);
        assert!(!d.kink);
        // exponent < 1 at zero is a kink
        let e = Expr::Pow { base: Box::new(x1()), num: 1, den: 3, loc: loc() };
        assert!(e.eval_dual(&[0.0], &[]).unwrap().kink);
    }

    #[test]
    fn division_by_zero_reports_location() {
        let e = Expr::Div(Box::new(Expr::Const(1.0)), Box::new(x1()), SrcLoc::new(3, 9));
        match e.eval(&[0.0], &[]) {
            Err(EvalError::DivisionByZero { loc }) => assert_eq!((loc.line, loc.col), (3, 9)),
            other => panic!("expected division error, got {:?}", other),
        }
    }

    #[test]
    fn affine_detection() {
        // -y1-x1-1 is affine
        let e = Expr::Sub(
            Box::new(Expr::Sub(Box::new(Expr::Neg(Box::new(y1()))), Box::new(x1()))),
            Box::new(Expr::Const(1.0)),
        );
        assert!(e.is_affine());
        // (x1-1)^2 + y1^2 - 4 is not
        let e = Expr::Pow { base: Box::new(x1()), num: 2, den: 1, loc: loc() };
        assert!(!e.is_affine());
    }
}
