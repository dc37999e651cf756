//! Dense simplex LP solver, polyhedron representation, and vertex
//! enumeration at small dimension. Every multiplier-set computation in the
//! toolkit goes through this module.

pub mod linalg;
mod polyhedron;
mod simplex;

pub use polyhedron::{
    enumerate_vertices, hull_vertices, point_in_convex_hull, zero_in_convex_hull,
    HullCertificate, Polyhedron, Polytope, VERTEX_DIM_MAX,
};
pub use simplex::{feasible_point, solve_lp, LpResult, LpStatus, Sense};

use thiserror::Error;

/// Feasibility tolerance used throughout the kernel.
pub const TOL_FEAS: f64 = 1e-9;
/// Reduced-cost / optimality tolerance.
pub const TOL_OPT: f64 = 1e-9;
/// Vertex deduplication tolerance (infinity norm), looser than TOL_FEAS to
/// absorb basis-dependent roundoff.
pub const TOL_VERT: f64 = 1e-8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("numerical failure in LP kernel: {0}")]
    NumericalFailure(&'static str),
    #[error("vertex enumeration dimension {dim} exceeds the supported maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },
}
