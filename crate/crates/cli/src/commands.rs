//! Command handlers. Each returns the JSON `results` payload, the
//! provenance map, a human summary for stderr, and its exit code.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use bilevel_core::cq::{
    check_dir_quasinormality, check_foscms, check_nnamcq, check_rcr, check_rs_sufficient,
    implication_chain_violations, probe_calmness, probe_mscq, CqConfig, CqReport,
};
use bilevel_core::kkt::{find_certificate, verify_certificate, KktConfig};
use bilevel_core::lower::{
    check_hypotheses, directional_solutions, solve_lower, DirectionalSolutionSet, LowerConfig,
    LowerError,
};
use bilevel_core::lpkernel::enumerate_vertices;
use bilevel_core::model::{
    critical_cone_vp, first_order, linearization_cone_vp, BilevelProgram, DirectionalContext,
    FRowMode, FirstOrderData, VPrimeFn,
};
use bilevel_core::oracle::{OracleId, OracleInstance, OracleRefuter};
use bilevel_core::sensitivity::{
    dderiv_fd, dderiv_lp, theta_set, SensitivityConfig, SubdiffEstimate,
};
use bilevel_core::verdict::Verdict;

pub struct CommandOutput {
    pub results: Value,
    pub provenance: Value,
    pub summary: Vec<(String, String)>,
    pub exit: i32,
}

#[derive(Debug)]
pub struct CmdError {
    pub message: String,
    pub exit: i32,
}

impl CmdError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CmdError { message: msg.into(), exit: 2 }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CmdError { message: msg.into(), exit: 3 }
    }
}

impl From<LowerError> for CmdError {
    fn from(e: LowerError) -> Self {
        match e {
            LowerError::BoxMissing
            | LowerError::NoFeasiblePoint { .. }
            | LowerError::GridDimensionTooLarge { .. }
            | LowerError::Eval(_) => CmdError::usage(e.to_string()),
        }
    }
}

impl From<bilevel_core::exprdsl::EvalError> for CmdError {
    fn from(e: bilevel_core::exprdsl::EvalError) -> Self {
        CmdError::usage(e.to_string())
    }
}

impl From<bilevel_core::sensitivity::SensitivityError> for CmdError {
    fn from(e: bilevel_core::sensitivity::SensitivityError) -> Self {
        CmdError::numerical(e.to_string())
    }
}

impl From<bilevel_core::lpkernel::LpError> for CmdError {
    fn from(e: bilevel_core::lpkernel::LpError) -> Self {
        CmdError::numerical(e.to_string())
    }
}

impl From<bilevel_core::cq::CqError> for CmdError {
    fn from(e: bilevel_core::cq::CqError) -> Self {
        CmdError::numerical(e.to_string())
    }
}

impl From<bilevel_core::kkt::KktError> for CmdError {
    fn from(e: bilevel_core::kkt::KktError) -> Self {
        CmdError::numerical(e.to_string())
    }
}

/// Everything a handler needs: the program, optional builtin oracle, and
/// resolved configurations.
pub struct Toolkit {
    pub program: BilevelProgram,
    pub oracle: Option<OracleId>,
    pub lower_cfg: LowerConfig,
    pub sens_cfg: SensitivityConfig,
    pub cq_cfg: CqConfig,
    pub kkt_cfg: KktConfig,
    pub tol_act: f64,
    pub t0: f64,
    pub beta: f64,
    pub count: usize,
    pub frow: FRowMode,
}

type ValueFn = Box<dyn FnMut(&[f64]) -> Option<f64>>;
type SolutionsFn = Box<dyn FnMut(&[f64]) -> Option<Vec<Vec<f64>>>>;

impl Toolkit {
    fn check_x(&self, x: &[f64]) -> Result<(), CmdError> {
        if x.len() != self.program.n {
            return Err(CmdError::usage(format!(
                "--x expects {} components, got {}",
                self.program.n,
                x.len()
            )));
        }
        Ok(())
    }

    fn check_y(&self, y: &[f64]) -> Result<(), CmdError> {
        if y.len() != self.program.m {
            return Err(CmdError::usage(format!(
                "--y expects {} components, got {}",
                self.program.m,
                y.len()
            )));
        }
        Ok(())
    }

    fn check_dir(&self, dir: &[f64]) -> Result<(), CmdError> {
        let want = self.program.n + self.program.m;
        if dir.len() != want {
            return Err(CmdError::usage(format!(
                "--dir expects {} components (u then v), got {}",
                want,
                dir.len()
            )));
        }
        Ok(())
    }

    fn ctx_over_x(&self, base: Vec<f64>, dir: Vec<f64>) -> DirectionalContext {
        DirectionalContext::new(base, dir).with_schedule(self.t0, self.beta, self.count)
    }

    fn dirsols(&self, x: &[f64], u: &[f64]) -> Result<DirectionalSolutionSet, CmdError> {
        let ctx = self.ctx_over_x(x.to_vec(), u.to_vec());
        Ok(directional_solutions(&self.program, x, u, &ctx, &self.lower_cfg)?)
    }

    pub(crate) fn theta(&self, x: &[f64], u: &[f64]) -> Result<SubdiffEstimate, CmdError> {
        let ds = self.dirsols(x, u)?;
        let ctx = self.ctx_over_x(x.to_vec(), u.to_vec());
        let hyp = check_hypotheses(&self.program, x, u, &ctx, &self.lower_cfg)?;
        Ok(theta_set(&self.program, x, u, &ds, &self.sens_cfg, Some(hyp))?)
    }

    /// Value-function evaluator: closed form for built-in instances, the
    /// memoized grid solver otherwise.
    fn value_fn(&self) -> ValueFn {
        match self.oracle {
            Some(id) => {
                let inst = OracleInstance::new(id);
                Box::new(move |x: &[f64]| inst.value(x[0]))
            }
            None => {
                let prog = self.program.clone();
                let cfg = self.lower_cfg.clone();
                let memo: Arc<Mutex<HashMap<Vec<u64>, Option<f64>>>> =
                    Arc::new(Mutex::new(HashMap::new()));
                Box::new(move |x: &[f64]| {
                    let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                    if let Some(hit) = memo.lock().unwrap().get(&key) {
                        return *hit;
                    }
                    let out = solve_lower(&prog, x, &cfg).ok().map(|r| r.value);
                    memo.lock().unwrap().insert(key, out);
                    out
                })
            }
        }
    }

    fn solutions_fn(&self) -> SolutionsFn {
        match self.oracle {
            Some(id) => {
                let inst = OracleInstance::new(id);
                Box::new(move |x: &[f64]| {
                    let sols = inst.solutions(x[0]);
                    (!sols.is_empty()).then(|| sols.into_iter().map(|y| vec![y]).collect())
                })
            }
            None => {
                let prog = self.program.clone();
                let cfg = self.lower_cfg.clone();
                let memo: Arc<Mutex<HashMap<Vec<u64>, Option<Vec<Vec<f64>>>>>> =
                    Arc::new(Mutex::new(HashMap::new()));
                Box::new(move |x: &[f64]| {
                    let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                    if let Some(hit) = memo.lock().unwrap().get(&key) {
                        return hit.clone();
                    }
                    let out = solve_lower(&prog, x, &cfg).ok().map(|r| r.solutions);
                    memo.lock().unwrap().insert(key, out.clone());
                    out
                })
            }
        }
    }

    /// V'(x; .) oracle backed by the LP formula, memoized per direction.
    fn vprime_fn(&self, x: &[f64]) -> Result<VPrimeFn, CmdError> {
        let prog = self.program.clone();
        let lower_cfg = self.lower_cfg.clone();
        let sens_cfg = self.sens_cfg.clone();
        let x = x.to_vec();
        let (t0, beta, count) = (self.t0, self.beta, self.count);
        let memo: Mutex<HashMap<Vec<u64>, f64>> = Mutex::new(HashMap::new());
        Ok(Arc::new(move |u: &[f64]| {
            let key: Vec<u64> = u.iter().map(|v| v.to_bits()).collect();
            if let Some(hit) = memo.lock().unwrap().get(&key) {
                return *hit;
            }
            let ctx = DirectionalContext::new(x.clone(), u.to_vec())
                .with_schedule(t0, beta, count);
            let val = directional_solutions(&prog, &x, u, &ctx, &lower_cfg)
                .ok()
                .and_then(|ds| dderiv_lp(&prog, &x, u, &ds, &sens_cfg).ok())
                .map(|dd| dd.value)
                .unwrap_or(f64::NAN);
            memo.lock().unwrap().insert(key, val);
            val
        }))
    }

    fn first_order_at(&self, x: &[f64], y: &[f64]) -> Result<FirstOrderData, CmdError> {
        Ok(first_order(&self.program, x, y, self.tol_act)?)
    }
}

fn verdict_status(v: Verdict) -> String {
    v.to_string()
}

pub fn cmd_validate(tk: &Toolkit) -> Result<CommandOutput, CmdError> {
    let p = &tk.program;
    let results = json!({
        "n": p.n,
        "m": p.m,
        "num_lower_constraints": p.num_lower_constraints(),
        "num_upper_constraints": p.num_upper_constraints(),
        "has_box": p.y_box.is_some(),
        "canonical": crate::report::canonical_text(p),
    });
    Ok(CommandOutput {
        results,
        provenance: json!({"validate": "exprdsl::parse_program"}),
        summary: vec![("validate".to_string(), "OK".to_string())],
        exit: 0,
    })
}

pub fn cmd_value(tk: &Toolkit, x: &[f64]) -> Result<CommandOutput, CmdError> {
    tk.check_x(x)?;
    let res = solve_lower(&tk.program, x, &tk.lower_cfg)?;
    let mut multipliers = Vec::new();
    let mut warnings = Vec::new();
    for (poly, sol) in res.multiplier_sets.iter().zip(&res.solutions) {
        let feasible = bilevel_core::lpkernel::feasible_point(poly)?.is_some();
        if !feasible {
            // a KKT-less global minimizer is possible when no CQ holds
            // there; warn rather than fail
            warnings.push(format!("no Lagrange multiplier exists at solution {:?}", sol));
        }
        let verts = if poly.dim <= bilevel_core::lpkernel::VERTEX_DIM_MAX {
            serde_json::to_value(enumerate_vertices(poly)?).unwrap()
        } else {
            Value::Null
        };
        multipliers.push(json!({
            "polyhedron": poly,
            "vertices": verts,
            "feasible": feasible,
        }));
    }
    let mut summary = vec![
        ("V(x)".to_string(), format!("{:.12e}", res.value)),
        ("|S(x)|".to_string(), format!("{}", res.solutions.len())),
    ];
    for w in &warnings {
        summary.push(("warning".to_string(), w.clone()));
    }
    Ok(CommandOutput {
        results: json!({
            "x": x,
            "value": res.value,
            "solutions": res.solutions,
            "multiplier_sets": multipliers,
            "warnings": warnings,
            "diagnostics": serde_json::to_value(&res.diagnostics).unwrap(),
        }),
        provenance: json!({
            "value": "lower::solve_lower",
            "multiplier_sets": "lower::multiplier_set + lpkernel::enumerate_vertices",
        }),
        summary,
        exit: 0,
    })
}

pub fn cmd_dderiv(tk: &Toolkit, x: &[f64], u: &[f64]) -> Result<CommandOutput, CmdError> {
    tk.check_x(x)?;
    if u.len() != tk.program.n {
        return Err(CmdError::usage(format!(
            "--dir expects {} components for the x-direction",
            tk.program.n
        )));
    }
    let ds = tk.dirsols(x, u)?;
    let dd = dderiv_lp(&tk.program, x, u, &ds, &tk.sens_cfg)?;
    let fd = dderiv_fd(&tk.program, x, u, tk.t0, tk.beta, tk.count.min(12), &tk.lower_cfg)?;
    let ctx = tk.ctx_over_x(x.to_vec(), u.to_vec());
    let hyp = check_hypotheses(&tk.program, x, u, &ctx, &tk.lower_cfg)?;
    let agree = (dd.value - fd.value).abs() <= 1e-3_f64.max(1e-3 * dd.value.abs());
    let summary = vec![
        ("V'(x;u) lp".to_string(), format!("{:.12e}", dd.value)),
        ("V'(x;u) fd".to_string(), format!("{:.12e}", fd.value)),
        ("lp/fd agree".to_string(), if agree { "PASS" } else { "FAIL" }.to_string()),
    ];
    let exit = if agree { 0 } else { 1 };
    Ok(CommandOutput {
        results: json!({
            "x": x,
            "direction": u,
            "lp": serde_json::to_value(&dd).unwrap(),
            "fd": serde_json::to_value(&fd).unwrap(),
            "agree_1e3": agree,
            "hypotheses": serde_json::to_value(&hyp).unwrap(),
            "directional_solutions": serde_json::to_value(&ds.representatives).unwrap(),
        }),
        provenance: json!({
            "lp": "sensitivity::dderiv_lp",
            "fd": "sensitivity::dderiv_fd",
            "hypotheses": "lower::check_hypotheses",
        }),
        summary,
        exit,
    })
}

pub fn cmd_subdiff(tk: &Toolkit, x: &[f64], u: &[f64]) -> Result<CommandOutput, CmdError> {
    tk.check_x(x)?;
    let est = tk.theta(x, u)?;
    let invariant = est.components.iter().all(|c| c.w_invariant_across_sigma);
    let summary = vec![
        ("components".to_string(), est.components.len().to_string()),
        ("hull vertices".to_string(), est.hull_vertices.len().to_string()),
        ("bounded".to_string(), est.bounded.to_string()),
        (
            "W invariance".to_string(),
            if invariant { "PASS" } else { "FAIL" }.to_string(),
        ),
    ];
    Ok(CommandOutput {
        results: serde_json::to_value(&est).unwrap(),
        provenance: json!({
            "components": "sensitivity::w_set over sensitivity::sigma_set",
            "hull_vertices": "lpkernel::hull_vertices",
            "vprime": "sensitivity::dderiv_lp",
        }),
        summary,
        exit: if invariant { 0 } else { 1 },
    })
}

pub fn cmd_cones(
    tk: &Toolkit,
    x: &[f64],
    y: &[f64],
    dir: &[f64],
) -> Result<CommandOutput, CmdError> {
    tk.check_x(x)?;
    tk.check_y(y)?;
    tk.check_dir(dir)?;
    let fod = tk.first_order_at(x, y)?;
    let vprime = tk.vprime_fn(x)?;
    let lin = linearization_cone_vp(&fod, vprime.clone(), tk.frow, 1e-9);
    let crit = critical_cone_vp(&fod, vprime, tk.frow, 1e-9);
    let lin_res = lin.residuals(dir);
    let crit_res = crit.residuals(dir);
    let in_lin = lin_res.iter().all(|r| r.satisfied);
    let in_crit = crit_res.iter().all(|r| r.satisfied);
    let summary = vec![
        ("linearization cone".to_string(), if in_lin { "MEMBER" } else { "NOT MEMBER" }.to_string()),
        ("critical cone".to_string(), if in_crit { "MEMBER" } else { "NOT MEMBER" }.to_string()),
    ];
    Ok(CommandOutput {
        results: json!({
            "x": x, "y": y, "direction": dir,
            "frow_mode": format!("{:?}", tk.frow),
            "linearization": {"member": in_lin, "rows": serde_json::to_value(&lin_res).unwrap()},
            "critical": {"member": in_crit, "rows": serde_json::to_value(&crit_res).unwrap()},
            "active_lower": fod.active_lower,
            "active_upper": fod.active_upper,
        }),
        provenance: json!({
            "linearization": "model::linearization_cone_vp",
            "critical": "model::critical_cone_vp",
            "vprime": "sensitivity::dderiv_lp",
        }),
        summary,
        exit: 0,
    })
}

fn cq_to_json(rep: &CqReport) -> Value {
    serde_json::to_value(rep).unwrap()
}

#[allow(clippy::too_many_lines)]
pub fn cmd_check_cq(
    tk: &Toolkit,
    x: &[f64],
    y: &[f64],
    dir: &[f64],
) -> Result<CommandOutput, CmdError> {
    tk.check_x(x)?;
    tk.check_y(y)?;
    tk.check_dir(dir)?;
    let n = tk.program.n;
    let (u, v) = dir.split_at(n);
    let fod = tk.first_order_at(x, y)?;
    let theta = tk.theta(x, u)?;
    let ctx_full = tk.ctx_over_x(
        x.iter().chain(y.iter()).cloned().collect(),
        dir.to_vec(),
    );
    let mut value_fn = tk.value_fn();
    let mut solutions_fn = tk.solutions_fn();
    let refuter = tk.oracle.map(|id| OracleRefuter { id });

    let nnamcq = check_nnamcq(&fod, &theta, &tk.cq_cfg)?;
    let foscms = check_foscms(&fod, u, v, &theta, theta.vprime, &tk.cq_cfg)?;
    let qn = check_dir_quasinormality(
        &tk.program,
        &fod,
        u,
        v,
        &theta,
        &ctx_full,
        &tk.cq_cfg,
        |xq| value_fn(xq),
        refuter.as_ref().map(|r| r as &dyn bilevel_core::cq::SignRefuter),
    )?;
    let rs = check_rs_sufficient(&tk.program, &fod, &tk.cq_cfg)?;
    let rcr = check_rcr(&tk.program, x, y, 0.1, 40, 7)?;
    let mscq = probe_mscq(&tk.program, &fod, u, v, &ctx_full, &tk.cq_cfg, |xq| value_fn(xq), |xq| {
        solutions_fn(xq)
    })?;
    let calm = probe_calmness(&tk.program, &fod, u, v, &ctx_full, &tk.cq_cfg, |xq| value_fn(xq))?;

    let chain = [
        ("nnamcq", nnamcq.verdict),
        ("foscms", foscms.verdict),
        ("quasi-normality", qn.verdict),
        ("mscq", mscq.verdict),
        ("calmness", calm.verdict),
    ];
    let inversions = implication_chain_violations(&chain);
    let mut summary: Vec<(String, String)> = chain
        .iter()
        .map(|(name, v)| (name.to_string(), verdict_status(*v)))
        .collect();
    summary.push(("rs-sufficient".to_string(), verdict_status(rs.verdict)));
    summary.push(("rcr-regularity".to_string(), verdict_status(rcr.verdict)));
    summary.push((
        "implication chain".to_string(),
        if inversions.is_empty() { "CONSISTENT" } else { "INVERTED" }.to_string(),
    ));
    let exit = if inversions.is_empty() { 0 } else { 1 };
    Ok(CommandOutput {
        results: json!({
            "x": x, "y": y, "direction": dir,
            "nnamcq": cq_to_json(&nnamcq),
            "foscms": cq_to_json(&foscms),
            "quasi_normality": cq_to_json(&qn),
            "rs_sufficient": cq_to_json(&rs),
            "rcr_regularity": cq_to_json(&rcr),
            "mscq": cq_to_json(&mscq),
            "calmness": cq_to_json(&calm),
            "chain_inversions": inversions,
            "theta": serde_json::to_value(&theta).unwrap(),
        }),
        provenance: json!({
            "nnamcq": "cq::check_nnamcq",
            "foscms": "cq::check_foscms",
            "quasi_normality": "cq::check_dir_quasinormality",
            "rs_sufficient": "cq::check_rs_sufficient",
            "rcr_regularity": "cq::check_rcr",
            "mscq": "cq::probe_mscq",
            "calmness": "cq::probe_calmness",
            "theta": "sensitivity::theta_set",
        }),
        summary,
        exit,
    })
}

pub fn cmd_kkt(
    tk: &Toolkit,
    x: &[f64],
    y: &[f64],
    dir: &[f64],
) -> Result<CommandOutput, CmdError> {
    tk.check_x(x)?;
    tk.check_y(y)?;
    tk.check_dir(dir)?;
    let n = tk.program.n;
    let (u, v) = dir.split_at(n);
    let fod = tk.first_order_at(x, y)?;
    let theta = tk.theta(x, u)?;
    let found = find_certificate(&fod, u, v, &theta, &tk.kkt_cfg)?;
    let (results, summary, exit) = match found {
        Some(cert) => {
            let report = verify_certificate(&fod, &cert, &theta, &tk.kkt_cfg);
            let status = if report.pass { "PASS" } else { "FAIL" };
            (
                json!({
                    "certificate": serde_json::to_value(&cert).unwrap(),
                    "verification": serde_json::to_value(&report).unwrap(),
                    "found": true,
                }),
                vec![
                    ("certificate".to_string(), "FOUND".to_string()),
                    ("verification".to_string(), status.to_string()),
                    ("max residual".to_string(), format!("{:.3e}", report.max_residual())),
                ],
                if report.pass { 0 } else { 1 },
            )
        }
        None => (
            json!({"found": false}),
            vec![("certificate".to_string(), "ABSENT".to_string())],
            1,
        ),
    };
    Ok(CommandOutput {
        results,
        provenance: json!({
            "certificate": "kkt::find_certificate",
            "verification": "kkt::verify_certificate",
            "theta": "sensitivity::theta_set",
        }),
        summary,
        exit,
    })
}

pub fn cmd_calmness(
    tk: &Toolkit,
    x: &[f64],
    y: &[f64],
    dir: &[f64],
) -> Result<CommandOutput, CmdError> {
    tk.check_x(x)?;
    tk.check_y(y)?;
    tk.check_dir(dir)?;
    let n = tk.program.n;
    let (u, v) = dir.split_at(n);
    let fod = tk.first_order_at(x, y)?;
    let ctx_full = tk.ctx_over_x(
        x.iter().chain(y.iter()).cloned().collect(),
        dir.to_vec(),
    );
    let mut value_fn = tk.value_fn();
    let rep = probe_calmness(&tk.program, &fod, u, v, &ctx_full, &tk.cq_cfg, |xq| value_fn(xq))?;
    let summary = vec![("calmness".to_string(), verdict_status(rep.verdict))];
    Ok(CommandOutput {
        results: cq_to_json(&rep),
        provenance: json!({"calmness": "cq::probe_calmness"}),
        summary,
        exit: 0,
    })
}
