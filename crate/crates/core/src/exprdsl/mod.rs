//! Problem-definition language: expression trees, parsing, and exact first
//! derivatives via forward-mode dual numbers.

mod ast;
mod parse;

pub use ast::{DualValue, Expr, SrcLoc, UnaryFn, VarKind};
pub use parse::{parse_expr, parse_expr_at, parse_program};

use thiserror::Error;

/// Errors raised while parsing a problem file or expression.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("variable `{var}` at {line}:{col} is out of the declared dimensions")]
    Dimension { line: u32, col: u32, var: String },
    #[error("exponent at {line}:{col} has an even denominator; wrap the base in abs(..)")]
    Exponent { line: u32, col: u32 },
}

/// Runtime domain errors during evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero at {loc}")]
    DivisionByZero { loc: SrcLoc },
    #[error("log of non-positive value {value} at {loc}")]
    LogNonPositive { loc: SrcLoc, value: f64 },
    #[error("even root of a negative value at {loc}")]
    EvenRootOfNegative { loc: SrcLoc },
}
