//! Robinson-stability sufficient conditions and relaxed-constant-rank
//! regularity of the lower-level feasible map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CqConfig, CqError, CqReport, CqWitness};
use crate::lpkernel::{feasible_point, linalg, Polyhedron};
use crate::model::{BilevelProgram, FirstOrderData};
use crate::verdict::Verdict;

const RANK_THRESHOLD: f64 = 1e-8;

/// Sufficient conditions for Robinson stability of `g(x,y) <= 0` at the
/// point of `fod`:
///
/// 1. all lower constraints affine and the feasible set nonempty nearby,
/// 2. LICQ on the active gradients in y,
/// 3. no nonzero `lambda >= 0`, `lambda perp g`, `grad_y g^T lambda = 0`.
///
/// RS HOLDS when any sub-condition holds.
pub fn check_rs_sufficient(
    prog: &BilevelProgram,
    fod: &FirstOrderData,
    cfg: &CqConfig,
) -> Result<CqReport, CqError> {
    let p = prog.num_lower_constraints();
    let mut sub = Vec::new();

    // condition 1: affine rows + sampled nonempty feasible set nearby
    let affine = prog.lower_constraints.iter().all(|g| g.is_affine());
    let cond1 = if !affine {
        Verdict::Fails
    } else if p == 0 {
        Verdict::Holds
    } else {
        match &prog.y_box {
            Some(bx) => {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                let mut all_nonempty = true;
                for _ in 0..20 {
                    let x: Vec<f64> = fod
                        .x
                        .iter()
                        .map(|a| a + rng.gen_range(-0.1..0.1))
                        .collect();
                    let mut found = false;
                    let steps = 50;
                    let mut idx = vec![0usize; prog.m];
                    'grid: loop {
                        let y: Vec<f64> = idx
                            .iter()
                            .zip(bx)
                            .map(|(k, (lo, hi))| lo + (hi - lo) * (*k as f64) / (steps - 1) as f64)
                            .collect();
                        if prog.lower_feasible(&x, &y, 1e-9) {
                            found = true;
                            break;
                        }
                        let mut j = 0;
                        loop {
                            if j == prog.m {
                                break 'grid;
                            }
                            idx[j] += 1;
                            if idx[j] < steps {
                                break;
                            }
                            idx[j] = 0;
                            j += 1;
                        }
                    }
                    if !found {
                        all_nonempty = false;
                        break;
                    }
                }
                if all_nonempty {
                    Verdict::Holds
                } else {
                    Verdict::Inconclusive
                }
            }
            None => Verdict::Inconclusive,
        }
    };
    sub.push(("affine rows with nearby feasibility".to_string(), cond1));

    // condition 2: LICQ on active gradients in y
    let active_grads: Vec<Vec<f64>> = fod
        .active_lower
        .iter()
        .map(|&i| fod.y_block(&fod.jac_lower_cons[i]).to_vec())
        .collect();
    let cond2 = if active_grads.is_empty() {
        Verdict::Holds
    } else {
        let rank = linalg::rank_by_singular_values(&active_grads, RANK_THRESHOLD);
        if rank == active_grads.len() {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    };
    sub.push(("LICQ on active gradients".to_string(), cond2));

    // condition 3: dual MFCQ form via LP feasibility
    let cond3 = if p == 0 {
        Verdict::Holds
    } else {
        let mut poly = Polyhedron::new(p);
        for j in 0..prog.m {
            let row: Vec<f64> = fod.jac_lower_cons.iter().map(|g| g[fod.n + j]).collect();
            poly.push_eq(row, 0.0);
        }
        poly.push_eq(vec![1.0; p], 1.0);
        for i in 0..p {
            poly.push_nonneg(i);
            if !fod.is_lower_active(i) {
                poly.push_fix(i, 0.0);
            }
        }
        if feasible_point(&poly)?.is_some() {
            Verdict::Fails
        } else {
            Verdict::Holds
        }
    };
    sub.push(("dual MFCQ (no nonzero singular multiplier)".to_string(), cond3));

    // sufficient conditions failing does not refute RS itself
    let verdict = if sub.iter().any(|(_, v)| *v == Verdict::Holds) {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    };
    let mut rep = CqReport::new("rs-sufficient", verdict);
    rep.sub_verdicts = sub;
    let _ = cfg;
    Ok(rep)
}

const RCR_SUBSET_MAX: usize = 12;

/// Relaxed constant rank: every subfamily of active gradients keeps a
/// constant rank over sampled points of a ball around the base point.
pub fn check_rcr(
    prog: &BilevelProgram,
    x_bar: &[f64],
    y_bar: &[f64],
    sample_radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CqReport, CqError> {
    let tol_act = 1e-8;
    let fod = crate::model::first_order(prog, x_bar, y_bar, tol_act)?;
    let active = fod.active_lower.clone();
    if active.len() > RCR_SUBSET_MAX {
        return Err(CqError::TooManyActiveConstraints {
            count: active.len(),
            max: RCR_SUBSET_MAX,
        });
    }
    if active.is_empty() {
        return Ok(
            CqReport::new("rcr-regularity", Verdict::Evidence).with_note("no active constraints")
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<(Vec<f64>, Vec<f64>)> = vec![(x_bar.to_vec(), y_bar.to_vec())];
    for _ in 0..n_samples {
        let x: Vec<f64> = x_bar
            .iter()
            .map(|a| a + rng.gen_range(-sample_radius..sample_radius))
            .collect();
        let y: Vec<f64> = y_bar
            .iter()
            .map(|a| a + rng.gen_range(-sample_radius..sample_radius))
            .collect();
        points.push((x, y));
    }
    // gradient rows in y per point, per active constraint
    let mut grads: Vec<Vec<Vec<f64>>> = Vec::new();
    for (x, y) in &points {
        let mut per_point = Vec::new();
        for &i in &active {
            let d = prog.lower_constraints[i].eval_dual(x, y)?;
            per_point.push(d.derivs[prog.n..].to_vec());
        }
        grads.push(per_point);
    }
    for mask in 1u32..(1 << active.len()) {
        let subset: Vec<usize> = (0..active.len()).filter(|j| mask & (1 << j) != 0).collect();
        let rank_at = |pt: usize| -> usize {
            let rows: Vec<Vec<f64>> = subset.iter().map(|&j| grads[pt][j].clone()).collect();
            linalg::rank_by_singular_values(&rows, RANK_THRESHOLD)
        };
        let r0 = rank_at(0);
        for pt in 1..points.len() {
            let r = rank_at(pt);
            if r != r0 {
                let subset_named: Vec<usize> = subset.iter().map(|&j| active[j]).collect();
                let mut z0: Vec<f64> = points[0].0.clone();
                z0.extend_from_slice(&points[0].1);
                let mut zp: Vec<f64> = points[pt].0.clone();
                zp.extend_from_slice(&points[pt].1);
                return Ok(CqReport::new("rcr-regularity", Verdict::Violated).with_witness(
                    CqWitness::RankDrop {
                        subset: subset_named,
                        point_a: z0,
                        rank_a: r0,
                        point_b: zp,
                        rank_b: r,
                    },
                ));
            }
        }
    }
    Ok(CqReport::new("rcr-regularity", Verdict::Evidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprdsl::parse_program;
    use crate::model::first_order;

    const EX31_TEXT: &str = "\
dims: n=1 m=1
F = (x1-y1-1)^(5/3)+4*(x1+y1+1)^(5/3)
f = -(x1+y1)^2+x1^3*(x1+y1-1)
G = [ -x1-1 ; x1-1 ]
g = [ -y1-x1-1 ; y1+x1-1 ]
box: y in [-3,3]^1
";

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

    #[test]
    fn rs_condition1_holds_for_affine_instance() {
        let prog = parse_program(EX31_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-1.0], 1e-8).unwrap();
        let rep = check_rs_sufficient(&prog, &fod, &CqConfig::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Holds);
        assert_eq!(rep.sub_verdicts[0].1, Verdict::Holds);
    }

    #[test]
    fn rs_condition3_holds_for_disk_instance() {
        let prog = parse_program(EX51_TEXT).unwrap();
        let fod = first_order(&prog, &[0.0], &[-sqrt3()], 1e-8).unwrap();
        let rep = check_rs_sufficient(&prog, &fod, &CqConfig::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Holds);
        // affine fails (g1 is quadratic) but the dual MFCQ form holds
        assert_eq!(rep.sub_verdicts[0].1, Verdict::Fails);
        assert_eq!(rep.sub_verdicts[2].1, Verdict::Holds);
    }

    #[test]
    fn rs_condition3_invariant_under_row_rescaling() {
        // scaling rows by positive constants must not flip the verdict
        let base = parse_program(EX51_TEXT).unwrap();
        let scaled = parse_program(
            "dims: n=1 m=1
F = (sqrt(3)*x1-y1-sqrt(3))^2+x1+sqrt(3)*y1+3
f = 1-(x1-y1)^2
g = [ 7*((x1-1)^2+y1^2-4) ; 1/3*(-sqrt(3)*x1-y1-sqrt(3)) ]
box: y in [-3,3]^1
",
        )
        .unwrap();
        let cfg = CqConfig::default();
        let fb = first_order(&base, &[0.0], &[-sqrt3()], 1e-8).unwrap();
        let fs = first_order(&scaled, &[0.0], &[-sqrt3()], 1e-8).unwrap();
        let rb = check_rs_sufficient(&base, &fb, &cfg).unwrap();
        let rs = check_rs_sufficient(&scaled, &fs, &cfg).unwrap();
        assert_eq!(rb.sub_verdicts[2].1, rs.sub_verdicts[2].1);
    }

    #[test]
    fn licq_fails_on_duplicated_active_rows() {
        let prog = parse_program(
            "dims: n=1 m=1\nF = 0\nf = x1*y1\ng = [ y1 ; 2*y1 ]\nbox: y in [-1,1]^1\n",
        )
        .unwrap();
        let fod = first_order(&prog, &[0.3], &[0.0], 1e-8).unwrap();
        let rep = check_rs_sufficient(&prog, &fod, &CqConfig::default()).unwrap();
        assert_eq!(rep.sub_verdicts[1].1, Verdict::Fails);
        // ... but the rows are affine, so condition 1 still gives RS
        assert_eq!(rep.verdict, Verdict::Holds);
    }

    #[test]
    fn rcr_constant_rank_on_disk_instance() {
        let prog = parse_program(EX51_TEXT).unwrap();
        let rep = check_rcr(&prog, &[0.0], &[-sqrt3()], 0.1, 40, 7).unwrap();
        assert_eq!(rep.verdict, Verdict::Evidence);
    }

    #[test]
    fn rcr_detects_rank_drop() {
        // single constraint y^2 <= 0: grad_y g = 2y vanishes exactly at the
        // base point and is nonzero nearby
        let prog = parse_program(
            "dims: n=1 m=1\nF = 0\nf = y1\ng = [ y1^2 ]\nbox: y in [-1,1]^1\n",
        )
        .unwrap();
        let rep = check_rcr(&prog, &[0.0], &[0.0], 0.2, 30, 3).unwrap();
        assert_eq!(rep.verdict, Verdict::Violated);
        assert!(matches!(rep.witness, Some(CqWitness::RankDrop { .. })));
    }

    #[test]
    fn rcr_vacuous_without_active_rows() {
        let prog = parse_program(
            "dims: n=1 m=1\nF = 0\nf = y1\ng = [ y1-5 ]\nbox: y in [-1,1]^1\n",
        )
        .unwrap();
        let rep = check_rcr(&prog, &[0.0], &[0.0], 0.1, 10, 1).unwrap();
        assert_eq!(rep.verdict, Verdict::Evidence);
    }
}
