//! Command-line front end: analyze a bilevel program through its
//! value-function reformulation. JSON reports go to stdout (or `--json`),
//! a human-readable summary to stderr. Exit codes: 0 all checks pass,
//! 1 completed with failing rows, 2 input/usage error, 3 numerical failure.

mod commands;
mod input;
mod report;
mod reproduce;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use bilevel_core::cq::CqConfig;
use bilevel_core::kkt::KktConfig;
use bilevel_core::lower::LowerConfig;
use bilevel_core::model::FRowMode;
use bilevel_core::oracle::OracleId;
use bilevel_core::sensitivity::SensitivityConfig;

use commands::{CmdError, CommandOutput, Toolkit};
use input::{load_problem, parse_grid};
use report::{fingerprint, to_json_string, AnalysisReport, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FRowFlag {
    Le,
    Eq,
}

#[derive(Parser)]
#[command(
    name = "bilevel",
    about = "Value-function analysis of smooth bilevel programs: lower-level value functions, directional derivatives and subdifferential estimates, directional constraint qualifications, and KKT certificates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Active-set tolerance.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol_act: f64,
    /// Feasibility tolerance for reported solutions.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol_feas: f64,
    /// Grid points per y-coordinate in the lower-level solver.
    #[arg(long, global = true, default_value_t = 401)]
    grid: usize,
    /// Pattern-search refinement iterations.
    #[arg(long, global = true, default_value_t = 50)]
    refine_iters: usize,
    /// First step of the directional sampling schedule t_k = t0 * beta^k.
    #[arg(long, global = true, default_value_t = 1e-1)]
    t0: f64,
    /// Ratio of the sampling schedule.
    #[arg(long, global = true, default_value_t = 0.5)]
    beta: f64,
    /// Number of schedule steps.
    #[arg(long = "K", global = true, default_value_t = 20)]
    schedule_steps: usize,
    /// Solution clustering tolerance (default: 1e-3 of the box diameter).
    #[arg(long, global = true)]
    cluster_tol: Option<f64>,
    /// Reading of the value-function row in cones: inequality or equality.
    #[arg(long, global = true, value_enum, default_value_t = FRowFlag::Le)]
    frow: FRowFlag,
    /// Override the lower-level search box as `lo,hi`.
    #[arg(long = "box", global = true)]
    box_override: Option<String>,
    /// Penalty weights tried by the calmness probe (comma separated).
    #[arg(long, global = true, default_value = "1,10,100,1000,10000,100000,1000000")]
    rho_grid: String,
    /// Error-bound moduli tried by the subregularity probe.
    #[arg(long, global = true, default_value = "1,10,100,1000,10000,100000,1000000")]
    kappa_grid: String,
    /// Directions sampled per schedule step in sequential searches.
    #[arg(long, global = true, default_value_t = 64)]
    seq_budget: usize,
    /// Angular half-width of the sequential search cone (radians).
    #[arg(long, global = true, default_value_t = 0.1)]
    delta_seq: f64,
    /// Write the JSON report to a file instead of stdout.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    /// Seed for the deterministic samplers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a problem file.
    Validate { problem: String },
    /// Value function V(x), solution set S(x), and multiplier sets.
    Value {
        problem: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
    },
    /// Directional derivative V'(x;u) by the LP formula and by finite
    /// differences.
    Dderiv {
        problem: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        dir: Vec<f64>,
    },
    /// Directional subdifferential estimate: W components, Theta hull.
    Subdiff {
        problem: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        dir: Vec<f64>,
    },
    /// Linearization and critical cone membership at a point.
    Cones {
        problem: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        dir: Vec<f64>,
    },
    /// All constraint-qualification checks at a point and direction.
    CheckCq {
        problem: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        dir: Vec<f64>,
    },
    /// Directional KKT certificate search and verification.
    Kkt {
        problem: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        dir: Vec<f64>,
    },
    /// Directional calmness probe only.
    Calmness {
        problem: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        dir: Vec<f64>,
    },
    /// Re-run the built-in worked instances and compare against their
    /// expected-constants tables.
    Reproduce { id: String },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Value { .. } => "value",
            Command::Dderiv { .. } => "dderiv",
            Command::Subdiff { .. } => "subdiff",
            Command::Cones { .. } => "cones",
            Command::CheckCq { .. } => "check-cq",
            Command::Kkt { .. } => "kkt",
            Command::Calmness { .. } => "calmness",
            Command::Reproduce { .. } => "reproduce",
        }
    }

    fn problem_spec(&self) -> &str {
        match self {
            Command::Validate { problem }
            | Command::Value { problem, .. }
            | Command::Dderiv { problem, .. }
            | Command::Subdiff { problem, .. }
            | Command::Cones { problem, .. }
            | Command::CheckCq { problem, .. }
            | Command::Kkt { problem, .. }
            | Command::Calmness { problem, .. } => problem,
            Command::Reproduce { id } => id,
        }
    }
}

fn build_toolkit(cli: &Cli) -> Result<(Toolkit, String), CmdError> {
    let spec = cli.command.problem_spec();
    let loaded = load_problem(spec, cli.box_override.as_deref())
        .map_err(|e| CmdError::usage(e.to_string()))?;
    let rho = parse_grid(&cli.rho_grid, "rho-grid").map_err(|e| CmdError::usage(e.to_string()))?;
    let kappa =
        parse_grid(&cli.kappa_grid, "kappa-grid").map_err(|e| CmdError::usage(e.to_string()))?;
    let lower_cfg = LowerConfig {
        grid_points: cli.grid,
        refine_iters: cli.refine_iters,
        tol_feas: cli.tol_feas,
        tol_cluster: cli.cluster_tol,
        ..LowerConfig::default()
    };
    let cq_cfg = CqConfig {
        n_dir: cli.seq_budget,
        delta_seq: cli.delta_seq,
        rho_grid: rho,
        kappa_grid: kappa,
        ..CqConfig::default()
    };
    let tk = Toolkit {
        program: loaded.program,
        oracle: loaded.oracle,
        lower_cfg,
        sens_cfg: SensitivityConfig { tol_act: cli.tol_act.max(1e-7), ..Default::default() },
        cq_cfg,
        kkt_cfg: KktConfig { tol_feas: cli.tol_feas.max(1e-10), ..Default::default() },
        tol_act: cli.tol_act,
        t0: cli.t0,
        beta: cli.beta,
        count: cli.schedule_steps,
        frow: match cli.frow {
            FRowFlag::Le => FRowMode::Le,
            FRowFlag::Eq => FRowMode::Eq,
        },
    };
    Ok((tk, loaded.source))
}

fn run(cli: &Cli) -> Result<(CommandOutput, Toolkit, String), CmdError> {
    let (tk, source) = build_toolkit(cli)?;
    let out = match &cli.command {
        Command::Validate { .. } => commands::cmd_validate(&tk)?,
        Command::Value { x, .. } => commands::cmd_value(&tk, x)?,
        Command::Dderiv { x, dir, .. } => commands::cmd_dderiv(&tk, x, dir)?,
        Command::Subdiff { x, dir, .. } => commands::cmd_subdiff(&tk, x, dir)?,
        Command::Cones { x, y, dir, .. } => commands::cmd_cones(&tk, x, y, dir)?,
        Command::CheckCq { x, y, dir, .. } => commands::cmd_check_cq(&tk, x, y, dir)?,
        Command::Kkt { x, y, dir, .. } => commands::cmd_kkt(&tk, x, y, dir)?,
        Command::Calmness { x, y, dir, .. } => commands::cmd_calmness(&tk, x, y, dir)?,
        Command::Reproduce { id } => {
            let oid = OracleId::parse(id)
                .ok_or_else(|| CmdError::usage(format!("unknown built-in instance `{}`", id)))?;
            reproduce::cmd_reproduce(&tk, oid)?
        }
    };
    Ok((out, tk, source))
}

fn parameters_json(cli: &Cli) -> serde_json::Value {
    json!({
        "tol_act": cli.tol_act,
        "tol_feas": cli.tol_feas,
        "grid": cli.grid,
        "refine_iters": cli.refine_iters,
        "t0": cli.t0,
        "beta": cli.beta,
        "K": cli.schedule_steps,
        "cluster_tol": cli.cluster_tol,
        "frow": format!("{:?}", cli.frow),
        "rho_grid": cli.rho_grid,
        "kappa_grid": cli.kappa_grid,
        "seq_budget": cli.seq_budget,
        "delta_seq": cli.delta_seq,
        "seed": cli.seed,
    })
}

fn emit(cli: &Cli, text: &str) -> std::io::Result<()> {
    match &cli.json {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{}", text);
            std::io::stdout().flush()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    match run(&cli) {
        Ok((out, tk, source)) => {
            let report = AnalysisReport {
                schema: SCHEMA_VERSION,
                command: cli.command.name().to_string(),
                fingerprint: fingerprint(&tk.program),
                parameters: parameters_json(&cli),
                results: out.results,
                provenance: out.provenance,
            };
            let text = to_json_string(&report);
            if emit(&cli, &text).is_err() {
                eprintln!("error: could not write report");
                return ExitCode::from(3);
            }
            let mut err = std::io::stderr().lock();
            let _ = writeln!(err, "# {} on {}", cli.command.name(), source);
            for (label, status) in &out.summary {
                let _ = writeln!(err, "{:<44} {}", label, status);
            }
            let _ = writeln!(err, "# elapsed: {:.1} ms", started.elapsed().as_secs_f64() * 1e3);
            ExitCode::from(out.exit as u8)
        }
        Err(e) => {
            let payload = json!({
                "schema": SCHEMA_VERSION,
                "command": cli.command.name(),
                "error": e.message,
            });
            let text = to_json_string(&payload);
            let _ = emit(&cli, &text);
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit as u8)
        }
    }
}
