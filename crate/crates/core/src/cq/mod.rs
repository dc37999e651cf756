//! Constraint-qualification checkers for the value-function reformulation
//! at a feasible point and direction: NNAMCQ, directional FOSCMS,
//! directional quasi-normality with its sequential witness search, the
//! Robinson-stability sufficient conditions, RCR regularity, and empirical
//! calmness/metric-subregularity probes.

mod multiplier;
mod probes;
mod quasinorm;
mod regularity;

pub use multiplier::{check_foscms, check_nnamcq, MultiplierWitness};
pub use probes::{probe_calmness, probe_mscq, ProbeSample};
pub use quasinorm::{
    check_dir_quasinormality, QuasinormalityOutcome, SeqSample, SignPattern, SignRefuter,
};
pub use regularity::{check_rcr, check_rs_sufficient};

use serde::Serialize;
use thiserror::Error;

use crate::verdict::Verdict;

#[derive(Debug, Clone, Error)]
pub enum CqError {
    #[error("Theta estimate has recession rays; multiplier linearization is inconclusive")]
    InconclusiveUnbounded,
    #[error("too many active constraints for subset enumeration: {count} > {max}")]
    TooManyActiveConstraints { count: usize, max: usize },
    #[error(transparent)]
    Lp(#[from] crate::lpkernel::LpError),
    #[error(transparent)]
    Eval(#[from] crate::exprdsl::EvalError),
    #[error(transparent)]
    Lower(#[from] crate::lower::LowerError),
}

/// Tunables for the sequential searches. Defaults follow the report
/// schema: bounded, deterministic budgets that degrade to INCONCLUSIVE.
#[derive(Debug, Clone, Serialize)]
pub struct CqConfig {
    /// Directions sampled per schedule step in stage-2 searches.
    pub n_dir: usize,
    /// Angular half-width of the stage-2 search cone (radians).
    pub delta_seq: f64,
    /// Schedule steps that must all carry a strict-sign sample before a
    /// sequence witness is accepted.
    pub min_run: usize,
    /// Components below this threshold are treated as zero when reading a
    /// candidate's required sign pattern.
    pub tol_pattern: f64,
    /// Residual tolerance for witness re-verification.
    pub tol_feas: f64,
    /// Strictness threshold for sampled sign conditions.
    pub tol_sign: f64,
    /// Penalty weights tried by the calmness probe.
    pub rho_grid: Vec<f64>,
    /// Error-bound moduli tried by the subregularity probe.
    pub kappa_grid: Vec<f64>,
}

impl Default for CqConfig {
    fn default() -> Self {
        CqConfig {
            n_dir: 64,
            delta_seq: 0.1,
            min_run: 8,
            tol_pattern: 1e-7,
            tol_feas: 1e-8,
            tol_sign: 1e-14,
            rho_grid: (0..=6).map(|k| 10f64.powi(k)).collect(),
            kappa_grid: (0..=6).map(|k| 10f64.powi(k)).collect(),
        }
    }
}

/// Witness payloads attached to FAILS/VIOLATED verdicts.
#[derive(Debug, Clone, Serialize)]
pub enum CqWitness {
    Multiplier(MultiplierWitness),
    Sequence {
        candidate: MultiplierWitness,
        samples: Vec<SeqSample>,
    },
    RankDrop {
        subset: Vec<usize>,
        point_a: Vec<f64>,
        rank_a: usize,
        point_b: Vec<f64>,
        rank_b: usize,
    },
    Samples(Vec<ProbeSample>),
}

/// Structured verdict of one constraint-qualification check.
#[derive(Debug, Clone, Serialize)]
pub struct CqReport {
    pub name: String,
    pub verdict: Verdict,
    pub witness: Option<CqWitness>,
    pub sub_verdicts: Vec<(String, Verdict)>,
    pub notes: Vec<String>,
}

impl CqReport {
    pub fn new(name: impl Into<String>, verdict: Verdict) -> Self {
        CqReport {
            name: name.into(),
            verdict,
            witness: None,
            sub_verdicts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_witness(mut self, witness: CqWitness) -> Self {
        self.witness = Some(witness);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Check the implication chain NNAMCQ => FOSCMS => quasi-normality =>
/// MSCQ => calmness on a list of verdicts ordered upstream to downstream.
/// Returns a description of every (positive upstream, negative downstream)
/// inversion; INCONCLUSIVE breaks nothing.
pub fn implication_chain_violations(reports: &[(&str, Verdict)]) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..reports.len() {
        if !reports[i].1.is_positive() {
            continue;
        }
        for j in i + 1..reports.len() {
            if reports[j].1.is_negative() {
                out.push(format!(
                    "{} = {} but downstream {} = {}",
                    reports[i].0, reports[i].1, reports[j].0, reports[j].1
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_flags_inversions_only() {
        let ok = [
            ("nnamcq", Verdict::Fails),
            ("foscms", Verdict::Fails),
            ("quasi-normality", Verdict::Holds),
            ("mscq", Verdict::Inconclusive),
            ("calmness", Verdict::Evidence),
        ];
        assert!(implication_chain_violations(&ok).is_empty());
        let bad = [
            ("foscms", Verdict::Holds),
            ("calmness", Verdict::Violated),
        ];
        let v = implication_chain_violations(&bad);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("foscms"));
    }
}
