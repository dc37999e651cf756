//! End-to-end constraint-qualification runs on the built-in instances,
//! wired the same way the CLI drives them: closed-form value oracles feed
//! the sequential searches and the probes.

use bilevel_core::cq::{
    check_dir_quasinormality, check_foscms, check_nnamcq, implication_chain_violations,
    probe_calmness, probe_mscq, CqConfig, CqWitness,
};
use bilevel_core::lower::{directional_solutions, LowerConfig};
use bilevel_core::model::{first_order, DirectionalContext, FirstOrderData};
use bilevel_core::oracle::{OracleId, OracleInstance, OracleRefuter};
use bilevel_core::sensitivity::{theta_set, SensitivityConfig, SubdiffEstimate};
use bilevel_core::verdict::Verdict;

fn sqrt3() -> f64 {
    3.0_f64.sqrt()
}

struct Setup {
    oracle: OracleInstance,
    prog: bilevel_core::model::BilevelProgram,
    fod: FirstOrderData,
}

fn setup(id: OracleId) -> Setup {
    let oracle = OracleInstance::new(id);
    let prog = oracle.program();
    let (x, y) = oracle.paper_point();
    let fod = first_order(&prog, &x, &y, 1e-8).unwrap();
    Setup { oracle, prog, fod }
}

fn theta_for(s: &Setup, u: f64) -> SubdiffEstimate {
    let (x, _) = s.oracle.paper_point();
    let ctx = DirectionalContext::new(x.clone(), vec![u]).with_schedule(1e-1, 0.5, 12);
    let ds = directional_solutions(&s.prog, &x, &[u], &ctx, &LowerConfig::default()).unwrap();
    theta_set(&s.prog, &x, &[u], &ds, &SensitivityConfig::default(), None).unwrap()
}

fn ctx_for(s: &Setup, dir: Vec<f64>) -> DirectionalContext {
    let (x, y) = s.oracle.paper_point();
    let base: Vec<f64> = x.into_iter().chain(y).collect();
    DirectionalContext::new(base, dir).with_schedule(1e-1, 0.5, 20)
}

#[test]
fn quasinormality_holds_in_paper_direction_disk_instance() {
    let s = setup(OracleId::Ex51);
    let (u, v) = s.oracle.paper_direction();
    let theta = theta_for(&s, u[0]);
    let ctx = ctx_for(&s, vec![u[0], v[0]]);
    let refuter = OracleRefuter { id: OracleId::Ex51 };
    let oracle = OracleInstance::new(OracleId::Ex51);
    let rep = check_dir_quasinormality(
        &s.prog,
        &s.fod,
        &u,
        &v,
        &theta,
        &ctx,
        &CqConfig::default(),
        |x| oracle.value(x[0]),
        Some(&refuter),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Holds, "notes: {:?}", rep.notes);
    // HOLDS must come from the exact refutation, not stage-1 emptiness
    assert!(rep.notes.iter().any(|n| n.contains("refuted")));
}

#[test]
fn quasinormality_fails_classically_disk_instance() {
    let s = setup(OracleId::Ex51);
    let theta = theta_for(&s, 0.0);
    let ctx = ctx_for(&s, vec![0.0, 0.0]);
    let refuter = OracleRefuter { id: OracleId::Ex51 };
    let oracle = OracleInstance::new(OracleId::Ex51);
    let rep = check_dir_quasinormality(
        &s.prog,
        &s.fod,
        &[0.0],
        &[0.0],
        &theta,
        &ctx,
        &CqConfig::default(),
        |x| oracle.value(x[0]),
        Some(&refuter),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Fails, "notes: {:?}", rep.notes);
    match rep.witness {
        Some(CqWitness::Sequence { candidate, samples }) => {
            assert!(candidate.alpha > 1e-7);
            assert!(samples.len() >= 8);
            // strict signs re-verify at every reported sample, and t -> 0
            for s in &samples {
                for (name, val) in &s.rows {
                    assert!(*val > 0.0, "row {} = {} at t={}", name, val, s.t);
                }
            }
            assert!(samples.last().unwrap().t < samples[0].t);
        }
        other => panic!("expected sequence witness, got {:?}", other),
    }
}

#[test]
fn quasinormality_stage1_empty_without_active_rows() {
    // strictly feasible constraints and a nonzero lower gradient: the
    // multiplier system is infeasible and stage 1 alone gives HOLDS
    let text = "dims: n=1 m=1\nF = 0\nf = x1+y1\ng = [ y1-10 ]\nbox: y in [-1,1]^1\n";
    let prog = bilevel_core::exprdsl::parse_program(text).unwrap();
    let fod = first_order(&prog, &[0.0], &[0.0], 1e-8).unwrap();
    let theta = SubdiffEstimate {
        direction: vec![1.0],
        vprime: 1.0,
        components: Vec::new(),
        hull_vertices: vec![vec![1.0]],
        bounded: true,
        hypotheses: None,
        notes: Vec::new(),
    };
    let ctx = DirectionalContext::new(vec![0.0, 0.0], vec![1.0, 0.0]);
    let rep = check_dir_quasinormality(
        &prog,
        &fod,
        &[1.0],
        &[0.0],
        &theta,
        &ctx,
        &CqConfig::default(),
        |_| Some(0.0),
        None,
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Holds);
    assert!(rep.notes.iter().any(|n| n.contains("stage 1")));
}

#[test]
fn quasinormality_fails_in_noncritical_negative_direction_nonsmooth_instance() {
    // direction (-1, 1): the candidate pattern {f-V, g1} is realizable in a
    // wedge of width O(t^2); the angular pattern search must find it
    let s = setup(OracleId::Ex31);
    let theta = theta_for(&s, -1.0);
    let ctx = ctx_for(&s, vec![-1.0, 1.0]);
    let refuter = OracleRefuter { id: OracleId::Ex31 };
    let oracle = OracleInstance::new(OracleId::Ex31);
    let rep = check_dir_quasinormality(
        &s.prog,
        &s.fod,
        &[-1.0],
        &[1.0],
        &theta,
        &ctx,
        &CqConfig::default(),
        |x| oracle.value(x[0]),
        Some(&refuter),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Fails, "notes: {:?}", rep.notes);
}

#[test]
fn quasinormality_holds_in_paper_direction_nonsmooth_instance() {
    let s = setup(OracleId::Ex31);
    let theta = theta_for(&s, 1.0);
    let ctx = ctx_for(&s, vec![1.0, -1.0]);
    let refuter = OracleRefuter { id: OracleId::Ex31 };
    let oracle = OracleInstance::new(OracleId::Ex31);
    let rep = check_dir_quasinormality(
        &s.prog,
        &s.fod,
        &[1.0],
        &[-1.0],
        &theta,
        &ctx,
        &CqConfig::default(),
        |x| oracle.value(x[0]),
        Some(&refuter),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Holds, "notes: {:?}", rep.notes);
}

#[test]
fn calmness_violated_in_descent_direction_nonsmooth_instance() {
    let s = setup(OracleId::Ex31);
    let ctx = ctx_for(&s, vec![-1.0, 1.0]);
    let oracle = OracleInstance::new(OracleId::Ex31);
    let rep = probe_calmness(
        &s.prog,
        &s.fod,
        &[-1.0],
        &[1.0],
        &ctx,
        &CqConfig::default(),
        |x| oracle.value(x[0]),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Violated, "notes: {:?}", rep.notes);
    match rep.witness {
        Some(CqWitness::Samples(samples)) => {
            assert!(!samples.is_empty());
            // the witness family runs along (-1, 1): x ~ -t, y ~ t - 1
            for w in &samples {
                assert!(w.direction[0] < 0.0 && w.direction[1] > 0.0);
                assert!(w.objective_gap > 0.0);
            }
        }
        other => panic!("expected sample witness, got {:?}", other),
    }
}

#[test]
fn calmness_evidence_in_paper_direction_nonsmooth_instance() {
    let s = setup(OracleId::Ex31);
    let ctx = ctx_for(&s, vec![1.0, -1.0]);
    let oracle = OracleInstance::new(OracleId::Ex31);
    let rep = probe_calmness(
        &s.prog,
        &s.fod,
        &[1.0],
        &[-1.0],
        &ctx,
        &CqConfig::default(),
        |x| oracle.value(x[0]),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Evidence, "notes: {:?}", rep.notes);
}

#[test]
fn calmness_trivial_evidence_on_interior_samples() {
    // unconstrained instance at its optimum: every sample is feasible with
    // F >= F(zbar)
    let text = "dims: n=1 m=1\nF = x1^2+y1^2\nf = (y1-x1)^2\nbox: y in [-2,2]^1\n";
    let prog = bilevel_core::exprdsl::parse_program(text).unwrap();
    let fod = first_order(&prog, &[0.0], &[0.0], 1e-8).unwrap();
    let ctx = DirectionalContext::new(vec![0.0, 0.0], vec![1.0, 1.0]).with_schedule(1e-1, 0.5, 10);
    let rep = probe_calmness(
        &prog,
        &fod,
        &[1.0],
        &[1.0],
        &ctx,
        &CqConfig::default(),
        |_| Some(0.0),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Evidence);
}

#[test]
fn mscq_probe_consistent_with_calmness_nonsmooth_instance() {
    // metric subregularity implies calmness, so an EVIDENCE/VIOLATED pair
    // in that order must never occur
    let s = setup(OracleId::Ex31);
    let oracle = OracleInstance::new(OracleId::Ex31);
    let cfg = CqConfig::default();
    for dir in [[1.0, -1.0], [-1.0, 1.0]] {
        let ctx = ctx_for(&s, dir.to_vec());
        let mscq = probe_mscq(
            &s.prog,
            &s.fod,
            &dir[..1],
            &dir[1..],
            &ctx,
            &cfg,
            |x| oracle.value(x[0]),
            |x| {
                let sols = oracle.solutions(x[0]);
                (!sols.is_empty()).then(|| sols.into_iter().map(|y| vec![y]).collect())
            },
        )
        .unwrap();
        let calm = probe_calmness(&s.prog, &s.fod, &dir[..1], &dir[1..], &ctx, &cfg, |x| {
            oracle.value(x[0])
        })
        .unwrap();
        let chain = [("mscq", mscq.verdict), ("calmness", calm.verdict)];
        assert!(
            implication_chain_violations(&chain).is_empty(),
            "direction {:?}: mscq {:?} calm {:?}",
            dir,
            mscq.verdict,
            calm.verdict
        );
    }
}

#[test]
fn mscq_feasible_samples_are_satisfied() {
    let text = "dims: n=1 m=1\nF = x1^2+y1^2\nf = (y1-x1)^2\nbox: y in [-2,2]^1\n";
    let prog = bilevel_core::exprdsl::parse_program(text).unwrap();
    let fod = first_order(&prog, &[0.0], &[0.0], 1e-8).unwrap();
    let ctx = DirectionalContext::new(vec![0.0, 0.0], vec![1.0, 1.0]).with_schedule(1e-1, 0.5, 8);
    let rep = probe_mscq(
        &prog,
        &fod,
        &[1.0],
        &[1.0],
        &ctx,
        &CqConfig::default(),
        |_| Some(0.0),
        |x| Some(vec![vec![x[0]]]),
    )
    .unwrap();
    assert_eq!(rep.verdict, Verdict::Evidence);
}

#[test]
fn nnamcq_fails_at_every_sampled_feasible_point() {
    // the reformulated problem admits a nonzero abnormal multiplier at any
    // feasible point; spot-check graph points away from the optimum
    for id in [OracleId::Ex31, OracleId::Ex51] {
        let inst = OracleInstance::new(id);
        let prog = inst.program();
        for x in [0.4, -0.3] {
            for y in inst.solutions(x) {
                let fod = first_order(&prog, &[x], &[y], 1e-7).unwrap();
                let ctx = DirectionalContext::new(vec![x], vec![0.0]).with_schedule(1e-1, 0.5, 10);
                let ds = directional_solutions(&prog, &[x], &[0.0], &ctx, &LowerConfig::default())
                    .unwrap();
                let theta =
                    theta_set(&prog, &[x], &[0.0], &ds, &SensitivityConfig::default(), None)
                        .unwrap();
                let rep = check_nnamcq(&fod, &theta, &CqConfig::default()).unwrap();
                assert_eq!(
                    rep.verdict,
                    Verdict::Fails,
                    "{:?} at ({}, {}): expected NNAMCQ to fail",
                    id,
                    x,
                    y
                );
            }
        }
    }
}

#[test]
fn full_chain_consistency_paper_directions() {
    for id in [OracleId::Ex31, OracleId::Ex51] {
        let s = setup(id);
        let oracle = OracleInstance::new(id);
        let refuter = OracleRefuter { id };
        let cfg = CqConfig::default();
        let (u, v) = s.oracle.paper_direction();
        let theta = theta_for(&s, u[0]);
        let ctx = ctx_for(&s, vec![u[0], v[0]]);
        let value = |x: &[f64]| oracle.value(x[0]);
        let nnamcq = check_nnamcq(&s.fod, &theta, &cfg).unwrap();
        let foscms = check_foscms(&s.fod, &u, &v, &theta, theta.vprime, &cfg).unwrap();
        let qn = check_dir_quasinormality(
            &s.prog, &s.fod, &u, &v, &theta, &ctx, &cfg, value, Some(&refuter),
        )
        .unwrap();
        let mscq = probe_mscq(&s.prog, &s.fod, &u, &v, &ctx, &cfg, value, |x: &[f64]| {
            let sols = oracle.solutions(x[0]);
            (!sols.is_empty()).then(|| sols.into_iter().map(|y| vec![y]).collect())
        })
        .unwrap();
        let calm = probe_calmness(&s.prog, &s.fod, &u, &v, &ctx, &cfg, value).unwrap();
        let chain = [
            ("nnamcq", nnamcq.verdict),
            ("foscms", foscms.verdict),
            ("quasi-normality", qn.verdict),
            ("mscq", mscq.verdict),
            ("calmness", calm.verdict),
        ];
        let violations = implication_chain_violations(&chain);
        assert!(violations.is_empty(), "{:?}: {:?}", id, violations);
        // the paper's headline facts in these directions
        assert_eq!(nnamcq.verdict, Verdict::Fails);
        assert_eq!(foscms.verdict, Verdict::Fails);
        assert_eq!(qn.verdict, Verdict::Holds);
        assert_eq!(calm.verdict, Verdict::Evidence);
    }
}
