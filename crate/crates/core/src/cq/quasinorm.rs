//! Directional quasi-normality: the FOSCMS multiplier system plus, for any
//! nonzero candidate, the existence of sequences `t_k -> 0`,
//! `(u^k, v^k) -> (u, v)` along which every strictly-positive-multiplier
//! row becomes strictly positive simultaneously.
//!
//! Stage 1 enumerates the candidate abnormal multipliers as vertices of the
//! normalized FOSCMS polyhedron; refuting every vertex refutes every
//! nonzero solution, because supports only grow under convex combination.
//! Stage 2 searches for the sign-realizing sequence with a per-step
//! angular pattern search. HOLDS requires stage-1 emptiness or an
//! exact-sign refutation (available for the built-in oracle instances);
//! otherwise the bounded search returns FAILS with a witness or
//! INCONCLUSIVE.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::multiplier::{candidate_vertices, witness_from_point, MultiplierWitness};
use super::{CqConfig, CqError, CqReport, CqWitness};
use crate::model::{BilevelProgram, DirectionalContext, FirstOrderData};
use crate::sensitivity::SubdiffEstimate;
use crate::verdict::Verdict;

/// Required strict-sign rows of one abnormal-multiplier candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignPattern {
    /// `f - V > 0` required (the candidate has alpha > 0).
    pub value_row: bool,
    /// Lower constraints with `nu_g_i > 0`.
    pub lower_rows: Vec<usize>,
    /// Upper constraints with `nu_G_i > 0`.
    pub upper_rows: Vec<usize>,
}

impl SignPattern {
    fn of(witness: &MultiplierWitness, tol: f64) -> Self {
        SignPattern {
            value_row: witness.alpha > tol,
            lower_rows: witness
                .nu_g
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > tol)
                .map(|(i, _)| i)
                .collect(),
            upper_rows: witness
                .nu_upper
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > tol)
                .map(|(i, _)| i)
                .collect(),
        }
    }
}

/// Closed-form refutations of sign patterns, available for the built-in
/// oracle instances where V and S are known exactly.
pub trait SignRefuter {
    /// `Some(reason)` when no sequence approaching `point` in `direction`
    /// can realize every sign in `pattern` simultaneously.
    fn refute(
        &self,
        point: (&[f64], &[f64]),
        direction: &[f64],
        pattern: &SignPattern,
    ) -> Option<String>;
}

/// One sample of a sign-realizing sequence; every row value is strictly
/// positive.
#[derive(Debug, Clone, Serialize)]
pub struct SeqSample {
    pub t: f64,
    pub direction: Vec<f64>,
    pub z: Vec<f64>,
    pub rows: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub enum QuasinormalityOutcome {
    Stage1Empty,
    AllCandidatesRefuted(Vec<(SignPattern, String)>),
    WitnessFound,
    Inconclusive,
}

struct RowEval<'a, F> {
    prog: &'a BilevelProgram,
    base: Vec<f64>,
    n: usize,
    pattern: &'a SignPattern,
    value_fn: F,
}

impl<'a, F> RowEval<'a, F>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    /// Minimum over the required rows at `z = base + t * dir`; positive
    /// means all signs realized.
    fn margin(&mut self, t: f64, dir: &[f64]) -> Option<(f64, Vec<(String, f64)>, Vec<f64>)> {
        let z: Vec<f64> = self.base.iter().zip(dir).map(|(a, b)| a + t * b).collect();
        let (x, y) = z.split_at(self.n);
        let mut rows = Vec::new();
        let mut margin = f64::INFINITY;
        if self.pattern.value_row {
            let f = self.prog.lower_objective.eval(x, y).ok()?;
            let v = (self.value_fn)(x)?;
            rows.push(("f-V".to_string(), f - v));
            margin = margin.min(f - v);
        }
        for &i in &self.pattern.lower_rows {
            let g = self.prog.lower_constraints[i].eval(x, y).ok()?;
            rows.push((format!("g{}", i + 1), g));
            margin = margin.min(g);
        }
        for &i in &self.pattern.upper_rows {
            let gg = self.prog.upper_constraints[i].eval(x, y).ok()?;
            rows.push((format!("G{}", i + 1), gg));
            margin = margin.min(gg);
        }
        if rows.is_empty() {
            return None;
        }
        Some((margin, rows, z))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Orthonormal basis of the hyperplane orthogonal to `d` (Gram-Schmidt on
/// coordinate vectors).
fn tangent_basis(d: &[f64]) -> Vec<Vec<f64>> {
    let dim = d.len();
    let dn = norm(d);
    let mut basis: Vec<Vec<f64>> = vec![d.iter().map(|a| a / dn).collect()];
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        for b in &basis {
            let p: f64 = e.iter().zip(b).map(|(a, c)| a * c).sum();
            for (ei, bi) in e.iter_mut().zip(b) {
                *ei -= p * bi;
            }
        }
        let en = norm(&e);
        if en > 1e-10 {
            basis.push(e.iter().map(|a| a / en).collect());
        }
        if basis.len() == dim {
            break;
        }
    }
    basis.into_iter().skip(1).collect()
}

/// Best sign-realizing sample at one schedule step: coarse sampling over
/// the search cone followed by a pattern search on the angular offset.
/// The offset shrinks freely, so wedges of width O(t^2) are reachable.
fn search_step<F>(
    rows: &mut RowEval<'_, F>,
    t: f64,
    d: &[f64],
    cfg: &CqConfig,
    rng: &mut ChaCha8Rng,
) -> Option<SeqSample>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let dim = d.len();
    let dn = norm(d);
    let zero_dir = dn < 1e-14;
    let tangent = if zero_dir { Vec::new() } else { tangent_basis(d) };
    let k_t = if zero_dir { dim } else { tangent.len() };
    let dir_of = |c: &[f64]| -> Vec<f64> {
        if zero_dir {
            let cn = norm(c);
            if cn < 1e-300 {
                return vec![0.0; dim];
            }
            return c.iter().map(|a| a / cn).collect();
        }
        let mut dir = d.to_vec();
        for (ci, tau) in c.iter().zip(&tangent) {
            for (di, ti) in dir.iter_mut().zip(tau) {
                *di += ci * dn * ti;
            }
        }
        dir
    };

    // coarse pass
    let mut best_c = vec![0.0; k_t];
    let mut best = f64::NEG_INFINITY;
    let eval_c = |c: &[f64], rows: &mut RowEval<'_, F>| -> Option<f64> {
        let dir = dir_of(c);
        if norm(&dir) < 1e-300 {
            return None;
        }
        rows.margin(t, &dir).map(|(m, _, _)| m)
    };
    for j in 0..cfg.n_dir {
        let c: Vec<f64> = if zero_dir {
            (0..k_t).map(|_| rng.gen_range(-1.0..1.0)).collect()
        } else if k_t == 1 {
            // deterministic sweep for the planar case
            let a = -cfg.delta_seq + 2.0 * cfg.delta_seq * (j as f64) / (cfg.n_dir - 1) as f64;
            vec![a]
        } else {
            (0..k_t)
                .map(|_| rng.gen_range(-cfg.delta_seq..cfg.delta_seq))
                .collect()
        };
        if let Some(m) = eval_c(&c, rows) {
            if m > best {
                best = m;
                best_c = c;
            }
        }
    }
    // refine with a shrinking-step coordinate search from the best coarse
    // point and from the base direction
    let starts = [best_c.clone(), vec![0.0; k_t]];
    for start in starts {
        let mut c = start;
        let mut cur = eval_c(&c, rows).unwrap_or(f64::NEG_INFINITY);
        let mut h = cfg.delta_seq / 4.0;
        for _ in 0..70 {
            let mut improved = false;
            for j in 0..k_t {
                for s in [1.0, -1.0] {
                    let mut cand = c.clone();
                    cand[j] += s * h;
                    if !zero_dir && norm(&cand) > cfg.delta_seq {
                        continue;
                    }
                    if let Some(m) = eval_c(&cand, rows) {
                        if m > cur {
                            cur = m;
                            c = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                h *= 0.5;
                if h < 1e-18 {
                    break;
                }
            }
        }
        if cur > best {
            best = cur;
            best_c = c;
        }
    }
    if best <= cfg.tol_sign {
        return None;
    }
    let dir = dir_of(&best_c);
    let (margin, rows_v, z) = rows.margin(t, &dir)?;
    if margin <= cfg.tol_sign {
        return None;
    }
    Some(SeqSample { t, direction: dir, z, rows: rows_v })
}

/// Directional quasi-normality at the point of `fod` in direction
/// `(u, v)`. `value_fn` evaluates V (closed-form for oracle instances);
/// `refuter` supplies exact-sign refutations when available.
#[allow(clippy::too_many_arguments)]
pub fn check_dir_quasinormality<F>(
    prog: &BilevelProgram,
    fod: &FirstOrderData,
    u: &[f64],
    v: &[f64],
    theta: &SubdiffEstimate,
    ctx: &DirectionalContext,
    cfg: &CqConfig,
    mut value_fn: F,
    refuter: Option<&dyn SignRefuter>,
) -> Result<CqReport, CqError>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let (sys, vertices) = candidate_vertices(fod, theta, u, v, theta.vprime)?;
    if vertices.is_empty() {
        let mut rep = CqReport::new("quasi-normality", Verdict::Holds);
        rep.notes.push("stage 1: no nonzero abnormal multiplier exists".to_string());
        return Ok(rep);
    }
    let mut candidates: Vec<(MultiplierWitness, SignPattern)> = Vec::new();
    for pt in &vertices {
        let w = witness_from_point(&sys, fod, pt);
        let pat = SignPattern::of(&w, cfg.tol_pattern);
        if !candidates.iter().any(|(_, p)| *p == pat) {
            candidates.push((w, pat));
        }
    }

    let base: Vec<f64> = fod.x.iter().chain(fod.y.iter()).cloned().collect();
    let dir_full: Vec<f64> = u.iter().chain(v.iter()).cloned().collect();
    let ts: Vec<f64> = ctx.schedule().collect();
    let mut refutations: Vec<(SignPattern, String)> = Vec::new();
    let mut inconclusive_notes: Vec<String> = Vec::new();

    for (cand, pattern) in &candidates {
        let mut rows = RowEval {
            prog,
            base: base.clone(),
            n: fod.n,
            pattern,
            value_fn: &mut value_fn,
        };
        let mut samples: Vec<SeqSample> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for (k, &t) in ts.iter().enumerate() {
            match search_step(&mut rows, t, &dir_full, cfg, &mut rng) {
                Some(s) => samples.push(s),
                None => {
                    let _ = k;
                    break;
                }
            }
        }
        if samples.len() >= cfg.min_run {
            // witness found: every sample re-verifies strictly positive
            for s in &samples {
                debug_assert!(s.rows.iter().all(|(_, v)| *v > 0.0));
            }
            let mut rep = CqReport::new("quasi-normality", Verdict::Fails).with_witness(
                CqWitness::Sequence { candidate: cand.clone(), samples },
            );
            rep.notes.push(format!(
                "sign pattern {:?} realized along the schedule",
                pattern
            ));
            return Ok(rep);
        }
        // no numeric witness: consult the exact refuter
        match refuter.and_then(|r| r.refute((&fod.x, &fod.y), &dir_full, pattern)) {
            Some(reason) => refutations.push((pattern.clone(), reason)),
            None => inconclusive_notes.push(format!(
                "candidate with pattern {:?}: {} of {} schedule steps realized, no exact refutation",
                pattern,
                samples.len(),
                cfg.min_run
            )),
        }
    }

    if inconclusive_notes.is_empty() {
        let mut rep = CqReport::new("quasi-normality", Verdict::Holds);
        for (pat, reason) in &refutations {
            rep.notes.push(format!("pattern {:?} refuted: {}", pat, reason));
        }
        rep.sub_verdicts = refutations
            .iter()
            .map(|(p, _)| (format!("{:?}", p), Verdict::Holds))
            .collect();
        Ok(rep)
    } else {
        let mut rep = CqReport::new("quasi-normality", Verdict::Inconclusive);
        rep.notes = inconclusive_notes;
        for (pat, reason) in &refutations {
            rep.notes.push(format!("pattern {:?} refuted: {}", pat, reason));
        }
        Ok(rep)
    }
}
