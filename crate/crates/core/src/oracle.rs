//! Built-in example instances with closed-form value functions, solution
//! maps, and directional derivatives. They drive the `reproduce` pipeline
//! and supply the exact-sign refutations that let the quasi-normality
//! checker return HOLDS instead of INCONCLUSIVE.

use serde::Serialize;

use crate::cq::{SignPattern, SignRefuter};
use crate::exprdsl::parse_program;
use crate::model::BilevelProgram;

pub const EX31_ID: &str = "EX31";
pub const EX51_ID: &str = "EX51";

pub const EX31_TEXT: &str = "\
# nonsmooth bilevel instance with affine lower-level constraints
dims: n=1 m=1
F = (x1-y1-1)^(5/3)+4*(x1+y1+1)^(5/3)
f = -(x1+y1)^2+x1^3*(x1+y1-1)
G = [ -x1-1 ; x1-1 ]
g = [ -y1-x1-1 ; y1+x1-1 ]
box: y in [-3,3]^1
";

pub const EX51_TEXT: &str = "\
# bilevel instance over a disk with two lower-level minimizers at x = 0
dims: n=1 m=1
F = (sqrt(3)*x1-y1-sqrt(3))^2+x1+sqrt(3)*y1+3
f = 1-(x1-y1)^2
g = [ (x1-1)^2+y1^2-4 ; -sqrt(3)*x1-y1-sqrt(3) ]
box: y in [-3,3]^1
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OracleId {
    Ex31,
    Ex51,
}

impl OracleId {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            EX31_ID => Some(OracleId::Ex31),
            EX51_ID => Some(OracleId::Ex51),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OracleId::Ex31 => EX31_ID,
            OracleId::Ex51 => EX51_ID,
        }
    }
}

/// A named constant the `reproduce` pipeline asserts against.
#[derive(Debug, Clone, Serialize)]
pub struct ExpectedConstant {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

/// Built-in instance: problem text plus exact evaluators.
pub struct OracleInstance {
    pub id: OracleId,
    pub text: &'static str,
}

impl OracleInstance {
    pub fn new(id: OracleId) -> Self {
        let text = match id {
            OracleId::Ex31 => EX31_TEXT,
            OracleId::Ex51 => EX51_TEXT,
        };
        OracleInstance { id, text }
    }

    pub fn program(&self) -> BilevelProgram {
        parse_program(self.text).expect("built-in instance must parse")
    }

    /// Optimal point analyzed throughout.
    pub fn paper_point(&self) -> (Vec<f64>, Vec<f64>) {
        match self.id {
            OracleId::Ex31 => (vec![0.0], vec![-1.0]),
            OracleId::Ex51 => (vec![0.0], vec![-3.0_f64.sqrt()]),
        }
    }

    /// Closed-form value function; `None` outside the instance domain.
    pub fn value(&self, x: f64) -> Option<f64> {
        match self.id {
            OracleId::Ex31 => Some(if x > 0.0 { -1.0 - 2.0 * x.powi(3) } else { -1.0 }),
            OracleId::Ex51 => {
                if !(-1.0..=3.0).contains(&x) {
                    return None;
                }
                let s = (4.0 - (x - 1.0) * (x - 1.0)).sqrt();
                Some(if x > 0.0 {
                    1.0 - (x + s) * (x + s)
                } else if x < 0.0 {
                    1.0 - (x - s) * (x - s)
                } else {
                    -2.0
                })
            }
        }
    }

    /// Closed-form solution set S(x).
    pub fn solutions(&self, x: f64) -> Vec<f64> {
        match self.id {
            OracleId::Ex31 => {
                if x > 0.0 {
                    vec![-x - 1.0]
                } else if x < 0.0 {
                    vec![-x + 1.0]
                } else {
                    vec![-1.0, 1.0]
                }
            }
            OracleId::Ex51 => {
                if !(-1.0..=3.0).contains(&x) {
                    return Vec::new();
                }
                let s = (4.0 - (x - 1.0) * (x - 1.0)).sqrt();
                if x > 0.0 {
                    vec![-s]
                } else if x < 0.0 {
                    vec![s]
                } else {
                    vec![-s, s]
                }
            }
        }
    }

    /// Closed-form directional derivative V'(0; u) at the analyzed point.
    pub fn vprime_at_base(&self, u: f64) -> f64 {
        match self.id {
            OracleId::Ex31 => 0.0,
            OracleId::Ex51 => {
                let s3 = 3.0_f64.sqrt();
                if u >= 0.0 {
                    -(2.0 * s3 + 2.0) * u
                } else {
                    (2.0 * s3 - 2.0) * u
                }
            }
        }
    }

    /// Critical direction used in the worked analysis.
    pub fn paper_direction(&self) -> (Vec<f64>, Vec<f64>) {
        match self.id {
            OracleId::Ex31 => (vec![1.0], vec![-1.0]),
            OracleId::Ex51 => (vec![3.0_f64.sqrt()], vec![-1.0]),
        }
    }

    /// Constants the reproduce pipeline checks, with tolerances.
    pub fn expected_constants(&self) -> Vec<ExpectedConstant> {
        let s3 = 3.0_f64.sqrt();
        match self.id {
            OracleId::Ex31 => vec![
                ExpectedConstant { name: "V(0.5)", value: -1.25, tolerance: 1e-6 },
                ExpectedConstant { name: "V(-0.5)", value: -1.0, tolerance: 1e-6 },
                ExpectedConstant { name: "V'(0;1)", value: 0.0, tolerance: 1e-9 },
                ExpectedConstant { name: "V'(0;-1)", value: 0.0, tolerance: 1e-9 },
            ],
            OracleId::Ex51 => vec![
                ExpectedConstant { name: "V(0)", value: -2.0, tolerance: 1e-6 },
                ExpectedConstant {
                    name: "V'(0;1)",
                    value: -(2.0 * s3 + 2.0),
                    tolerance: 1e-9,
                },
                ExpectedConstant {
                    name: "theta_hull_vertex",
                    value: -(2.0 * s3 + 2.0),
                    tolerance: 1e-8,
                },
                ExpectedConstant { name: "lambda_vertex_1_l1", value: 1.0, tolerance: 1e-8 },
                ExpectedConstant { name: "lambda_vertex_2_l2", value: 2.0 * s3, tolerance: 1e-8 },
            ],
        }
    }
}

/// Exact refutations of quasi-normality sign patterns, following the
/// closed-form solution structure of the built-in instances.
pub struct OracleRefuter {
    pub id: OracleId,
}

impl SignRefuter for OracleRefuter {
    fn refute(
        &self,
        point: (&[f64], &[f64]),
        direction: &[f64],
        pattern: &SignPattern,
    ) -> Option<String> {
        let (x, y) = point;
        let u = direction[0];
        match self.id {
            OracleId::Ex51 => {
                // at (0, -sqrt3) with u > 0: any sequence with g1 > 0 has
                // y below the circle where f < V, so f - V > 0 and g1 > 0
                // cannot hold together
                let at_point = x[0].abs() < 1e-9 && (y[0] + 3.0_f64.sqrt()).abs() < 1e-9;
                if at_point && u > 0.0 && pattern.value_row && pattern.lower_rows.contains(&0) {
                    return Some(
                        "for x > 0, g1 > 0 forces y below the lower circle branch, \
                         where f(x,y) < f(x, -sqrt(4-(x-1)^2)) = V(x)"
                            .to_string(),
                    );
                }
                None
            }
            OracleId::Ex31 => {
                // at (0, -1) with u > 0: g1 > 0 means x + y < -1, where
                // f - V = (1-s^2) + x^3 (s+1) < 0 for x > 0
                let at_point = x[0].abs() < 1e-9 && (y[0] + 1.0).abs() < 1e-9;
                if at_point && u > 0.0 && pattern.value_row && pattern.lower_rows.contains(&0) {
                    return Some(
                        "for x > 0, g1 > 0 means x + y < -1, where both terms of \
                         f - V = (1 - s^2) + x^3 (s + 1) are negative"
                            .to_string(),
                    );
                }
                None
            }
        }
    }
}
