//! Report assembly and deterministic JSON emission.
//!
//! Floats are serialized with 17 significant digits so identical runs are
//! byte-identical and diffs stay meaningful. Keys are emitted in sorted
//! order (serde_json's default map). Wall-clock timings go to the stderr
//! summary only, never into the JSON, to keep the determinism contract.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use bilevel_core::model::BilevelProgram;

pub const SCHEMA_VERSION: u64 = 1;

/// Top-level analysis report.
#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub schema: u64,
    pub command: String,
    pub fingerprint: String,
    pub parameters: Value,
    pub results: Value,
    /// module/operation provenance per top-level result entry
    pub provenance: Value,
}

/// Canonical text of a program: reprinting the parsed structure strips
/// comments and whitespace so the fingerprint tracks content only.
pub fn canonical_text(prog: &BilevelProgram) -> String {
    let mut out = String::new();
    out.push_str(&format!("dims: n={} m={}\n", prog.n, prog.m));
    out.push_str(&format!("F = {}\n", prog.upper_objective));
    out.push_str(&format!("f = {}\n", prog.lower_objective));
    if !prog.upper_constraints.is_empty() {
        let rows: Vec<String> = prog.upper_constraints.iter().map(|e| e.to_string()).collect();
        out.push_str(&format!("G = [ {} ]\n", rows.join(" ; ")));
    }
    if !prog.lower_constraints.is_empty() {
        let rows: Vec<String> = prog.lower_constraints.iter().map(|e| e.to_string()).collect();
        out.push_str(&format!("g = [ {} ]\n", rows.join(" ; ")));
    }
    if let Some(bx) = &prog.y_box {
        if let Some((lo, hi)) = bx.first() {
            out.push_str(&format!("box: y in [{},{}]^{}\n", lo, hi, prog.m));
        }
    }
    out
}

pub fn fingerprint(prog: &BilevelProgram) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_text(prog).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

fn write_f64(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("null");
    } else if v.is_infinite() {
        out.push_str(if v > 0.0 { "1e999" } else { "-1e999" });
    } else {
        out.push_str(&format!("{:.16e}", v));
    }
}

fn write_indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    write_f64(out, f);
                } else {
                    out.push_str(&n.to_string());
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                write_indent(out, depth + 1);
                write_value(out, item, depth + 1);
            }
            out.push('\n');
            write_indent(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (k, val)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                write_indent(out, depth + 1);
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_value(out, val, depth + 1);
            }
            out.push('\n');
            write_indent(out, depth);
            out.push('}');
        }
    }
}

/// Render any serializable value as deterministic JSON text.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    out
}
