//! Three-valued verdicts shared by the CQ checkers, the hypothesis probes,
//! and the report types.

use serde::Serialize;
use std::fmt;

/// Outcome of a check. `Holds`/`Fails` are reserved for multiplier-level
/// arguments (LP emptiness, exact refutations); `Evidence`/`Violated` for
/// sampled empirical probes. `Inconclusive` asserts nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Holds,
    Fails,
    Evidence,
    Violated,
    Inconclusive,
}

impl Verdict {
    /// The check affirms the property (exactly or empirically).
    pub fn is_positive(&self) -> bool {
        matches!(self, Verdict::Holds | Verdict::Evidence)
    }

    /// The check refutes the property (exactly or empirically).
    pub fn is_negative(&self) -> bool {
        matches!(self, Verdict::Fails | Verdict::Violated)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Holds => "HOLDS",
            Verdict::Fails => "FAILS",
            Verdict::Evidence => "EVIDENCE",
            Verdict::Violated => "VIOLATED",
            Verdict::Inconclusive => "INCONCLUSIVE",
        };
        f.write_str(s)
    }
}
