//! Problem loading: a path to a problem file or the name of a built-in
//! instance, plus CLI overrides.

use std::fmt;
use std::fs;

use bilevel_core::exprdsl::parse_program;
use bilevel_core::model::BilevelProgram;
use bilevel_core::oracle::{OracleId, OracleInstance};

#[derive(Debug)]
pub enum InputError {
    Io(String, std::io::Error),
    Parse(bilevel_core::exprdsl::ParseError),
    BadFlag(String),
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputError::Io(path, e) => write!(f, "cannot read `{}`: {}", path, e),
            InputError::Parse(e) => write!(f, "{}", e),
            InputError::BadFlag(msg) => write!(f, "{}", msg),
        }
    }
}

pub struct LoadedProblem {
    pub program: BilevelProgram,
    pub oracle: Option<OracleId>,
    pub source: String,
}

/// Resolve `spec` as a built-in id (EX31/EX51) or a file path and apply
/// the optional `--box lo,hi` override.
pub fn load_problem(spec: &str, box_override: Option<&str>) -> Result<LoadedProblem, InputError> {
    let (text, oracle, source) = match OracleId::parse(spec) {
        Some(id) => {
            let inst = OracleInstance::new(id);
            (inst.text.to_string(), Some(id), format!("builtin:{}", id.name()))
        }
        None => {
            let text = fs::read_to_string(spec)
                .map_err(|e| InputError::Io(spec.to_string(), e))?;
            (text, None, spec.to_string())
        }
    };
    let mut program = parse_program(&text).map_err(InputError::Parse)?;
    if let Some(bx) = box_override {
        let parts: Vec<&str> = bx.split(',').collect();
        if parts.len() != 2 {
            return Err(InputError::BadFlag(format!(
                "--box expects `lo,hi`, got `{}`",
                bx
            )));
        }
        let lo: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| InputError::BadFlag(format!("bad box bound `{}`", parts[0])))?;
        let hi: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| InputError::BadFlag(format!("bad box bound `{}`", parts[1])))?;
        if !(lo < hi) {
            return Err(InputError::BadFlag("--box requires lo < hi".to_string()));
        }
        program.y_box = Some(vec![(lo, hi); program.m]);
    }
    Ok(LoadedProblem { program, oracle, source })
}

/// Parse a comma-separated float list flag.
pub fn parse_grid(flag: &str, name: &str) -> Result<Vec<f64>, InputError> {
    flag.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| InputError::BadFlag(format!("bad entry `{}` in --{}", s, name)))
        })
        .collect()
}
