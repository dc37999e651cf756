//! Property suites: dual-number derivatives against central differences,
//! sign-preserving powers, parse/print round trips, directional
//! neighborhood geometry, and the LP kernel against brute-force basic
//! solution enumeration.

use proptest::prelude::*;

use bilevel_core::exprdsl::{parse_expr, Expr, SrcLoc, UnaryFn, VarKind};
use bilevel_core::lpkernel::{
    enumerate_vertices, solve_lp, LpStatus, Polyhedron, Sense,
};
use bilevel_core::model::{in_directional_neighborhood, DirectionalContext};

fn loc() -> SrcLoc {
    SrcLoc::new(1, 1)
}

/// Random expression trees over x1..x2, y1..y2 with tame constants.
fn arb_expr(depth: u32) -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        (-2.0..2.0_f64).prop_map(Expr::Const),
        (1usize..=2).prop_map(|i| Expr::Var { kind: VarKind::X, index: i }),
        (1usize..=2).prop_map(|i| Expr::Var { kind: VarKind::Y, index: i }),
    ];
    leaf.prop_recursive(depth, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b), loc())),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (inner.clone(), 1i64..=3, prop_oneof![Just(1i64), Just(3i64)]).prop_map(
                |(a, p, q)| Expr::Pow { base: Box::new(a), num: p, den: q, loc: loc() }
            ),
            inner.clone().prop_map(|a| Expr::Unary {
                func: UnaryFn::Sin,
                arg: Box::new(a),
                loc: loc()
            }),
            inner.clone().prop_map(|a| Expr::Unary {
                func: UnaryFn::Cos,
                arg: Box::new(a),
                loc: loc()
            }),
            inner.clone().prop_map(|a| Expr::Unary {
                func: UnaryFn::Abs,
                arg: Box::new(a),
                loc: loc()
            }),
        ]
    })
    .boxed()
}

fn central_diff(e: &Expr, x: &[f64], y: &[f64], h: f64) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    let eval_at = |xs: &[f64], ys: &[f64]| e.eval(xs, ys).ok();
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        out.push((eval_at(&xp, y)? - eval_at(&xm, y)?) / (2.0 * h));
    }
    for j in 0..y.len() {
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[j] += h;
        ym[j] -= h;
        out.push((eval_at(x, &yp)? - eval_at(x, &ym)?) / (2.0 * h));
    }
    Some(out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dual_derivative_matches_central_differences(
        e in arb_expr(3),
        xs in prop::array::uniform2(-1.2..1.2f64),
        ys in prop::array::uniform2(-1.2..1.2f64),
    ) {
        let x = xs.to_vec();
        let y = ys.to_vec();
        // stay away from kinks and domain edges
        let kd = e.kink_distance(&x, &y);
        prop_assume!(matches!(kd, Some(d) if d > 1e-4));
        let Ok(dual) = e.eval_dual(&x, &y) else { return Ok(()); };
        prop_assume!(!dual.kink);
        prop_assume!(dual.value.is_finite() && dual.value.abs() < 1e6);
        prop_assume!(dual.derivs.iter().all(|d| d.is_finite() && d.abs() < 1e6));
        let Some(fd) = central_diff(&e, &x, &y, 1e-6) else { return Ok(()); };
        // second-difference consistency filters ill-conditioned samples
        let Some(fd5) = central_diff(&e, &x, &y, 1e-5) else { return Ok(()); };
        for ((a, b), c) in dual.derivs.iter().zip(&fd).zip(&fd5) {
            let scale = 1.0_f64.max(a.abs()).max(b.abs());
            // the two central-difference levels must agree at the asserted
            // precision, otherwise the oracle itself is too ill-conditioned
            // here (stiff compositions like sin(c/x) near small x)
            prop_assume!((b - c).abs() <= 1e-7 * scale);
            prop_assert!(
                (a - b).abs() <= 1e-6 * scale,
                "ad {} vs fd {} (expr {})",
                a,
                b,
                e
            );
        }
    }

    #[test]
    fn signed_power_is_odd_for_odd_numerators(
        base in -3.0..3.0f64,
        p in prop_oneof![Just(1i64), Just(3), Just(5)],
        q in prop_oneof![Just(1i64), Just(3), Just(5)],
    ) {
        prop_assume!(base.abs() > 1e-9);
        let pow = |b: f64| {
            Expr::Pow { base: Box::new(Expr::Const(b)), num: p, den: q, loc: loc() }
                .eval(&[], &[])
                .unwrap()
        };
        // odd p: t^(p/q) is an odd function
        let lhs = pow(base);
        let rhs = -pow(-base);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn parse_print_parse_roundtrip(e in arb_expr(3)) {
        // the invariant is parse -> unparse -> parse, so start from parser
        // output (hand-built trees may use shapes the parser normalizes,
        // like a negation applied to a literal)
        let parsed = parse_expr(&e.to_string(), 2, 2)
            .unwrap_or_else(|err| panic!("`{}` failed to parse: {}", e, err));
        let printed = parsed.to_string();
        let reparsed = parse_expr(&printed, 2, 2)
            .unwrap_or_else(|err| panic!("`{}` failed to reparse: {}", printed, err));
        prop_assert!(
            parsed.structurally_equal(&reparsed),
            "`{}` changed structure",
            printed
        );
        // and printing is value-preserving where both evaluate
        if let (Ok(a), Ok(b)) = (e.eval(&[0.3, -0.2], &[0.1, 0.7]), reparsed.eval(&[0.3, -0.2], &[0.1, 0.7])) {
            if a.is_finite() && b.is_finite() {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn neighborhood_monotone_and_scale_invariant(
        z in prop::array::uniform2(-0.5..0.5f64),
        d in prop::array::uniform2(-1.0..1.0f64),
        eps in 0.1..1.0f64,
        delta in 0.05..1.5f64,
        grow_eps in 0.0..1.0f64,
        grow_delta in 0.0..0.5f64,
        alpha in 0.01..10.0f64,
    ) {
        let ctx = DirectionalContext {
            base: vec![0.0, 0.0],
            direction: d.to_vec(),
            epsilon: eps,
            delta,
            t0: 0.1,
            beta: 0.5,
            count: 5,
        };
        let inside = in_directional_neighborhood(&z, &ctx);
        // monotone in (eps, delta)
        let mut bigger = ctx.clone();
        bigger.epsilon += grow_eps;
        bigger.delta += grow_delta;
        if inside {
            prop_assert!(in_directional_neighborhood(&z, &bigger));
        }
        // invariant under positive rescaling of the direction
        let mut scaled = ctx.clone();
        scaled.direction = d.iter().map(|a| a * alpha).collect();
        prop_assert_eq!(inside, in_directional_neighborhood(&z, &scaled));
    }

    #[test]
    fn zero_direction_neighborhood_is_ball(
        z in prop::array::uniform3(-1.0..1.0f64),
        eps in 0.1..1.2f64,
        delta in 0.05..2.0f64,
    ) {
        let ctx = DirectionalContext {
            base: vec![0.0; 3],
            direction: vec![0.0; 3],
            epsilon: eps,
            delta,
            t0: 0.1,
            beta: 0.5,
            count: 5,
        };
        let norm = z.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert_eq!(in_directional_neighborhood(&z, &ctx), norm < eps);
    }
}

// ---------------------------------------------------------------------------
// LP kernel against brute-force basic-solution enumeration
// ---------------------------------------------------------------------------

/// Independent oracle: enumerate every subset of rows of size `dim`, solve
/// the square system, keep feasible solutions, optimize over them.
fn brute_force_optimum(poly: &Polyhedron, c: &[f64], sense: Sense) -> Option<f64> {
    let dim = poly.dim;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (r, b) in poly.a_eq.iter().zip(&poly.b_eq) {
        rows.push((r.clone(), *b));
    }
    for (r, b) in poly.a_in.iter().zip(&poly.b_in) {
        rows.push((r.clone(), *b));
    }
    let nrows = rows.len();
    if nrows < dim {
        return None;
    }
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..dim).collect();
    loop {
        // solve the dim x dim system by Cramer-style Gaussian elimination
        let mut a: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].0.clone()).collect();
        let mut b: Vec<f64> = idx.iter().map(|&i| rows[i].1).collect();
        let mut ok = true;
        for col in 0..dim {
            let piv = (col..dim)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            if a[piv][col].abs() < 1e-9 {
                ok = false;
                break;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for i in 0..dim {
                if i != col {
                    let f = a[i][col] / a[col][col];
                    for j in col..dim {
                        a[i][j] -= f * a[col][j];
                    }
                    b[i] -= f * b[col];
                }
            }
        }
        if ok {
            let pt: Vec<f64> = (0..dim).map(|i| b[i] / a[i][i]).collect();
            if poly.contains(&pt, 1e-7) {
                let val: f64 = c.iter().zip(&pt).map(|(a, b)| a * b).sum();
                best = Some(match (best, sense) {
                    (None, _) => val,
                    (Some(cur), Sense::Min) => cur.min(val),
                    (Some(cur), Sense::Max) => cur.max(val),
                });
            }
        }
        // next combination
        let mut i = dim;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < nrows - (dim - i) {
                idx[i] += 1;
                for j in i + 1..dim {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return best;
            }
        }
    }
}

fn random_bounded_lp(rng: &mut impl rand::Rng) -> (Polyhedron, Vec<f64>) {
    let dim = rng.gen_range(1..=5);
    let mut poly = Polyhedron::new(dim);
    let n_ineq = rng.gen_range(0..=6);
    let n_eq = rng.gen_range(0..=1.min(dim - 1));
    for _ in 0..n_eq {
        let row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        poly.push_eq(row, rng.gen_range(-1.0..1.0));
    }
    for _ in 0..n_ineq {
        let row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        poly.push_ineq(row, rng.gen_range(-0.5..2.0));
    }
    // box keeps every instance bounded, so Optimal/Infeasible are the only
    // outcomes and basic-solution enumeration is exhaustive
    let bound = rng.gen_range(1.0..4.0);
    for i in 0..dim {
        let mut row = vec![0.0; dim];
        row[i] = 1.0;
        poly.push_ineq(row.clone(), bound);
        row[i] = -1.0;
        poly.push_ineq(row, bound);
    }
    let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (poly, c)
}

#[test]
fn simplex_matches_brute_force_on_random_lps() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut optimal = 0;
    for case in 0..300 {
        let (poly, c) = random_bounded_lp(&mut rng);
        let sense = if case % 2 == 0 { Sense::Min } else { Sense::Max };
        let res = solve_lp(&poly, &c, sense).unwrap();
        let oracle = brute_force_optimum(&poly, &c, sense);
        match res.status {
            LpStatus::Optimal => {
                let bf = oracle.unwrap_or_else(|| panic!("case {}: oracle found nothing", case));
                assert!(
                    (res.value - bf).abs() <= 1e-9 * (1.0 + bf.abs()),
                    "case {}: simplex {} vs brute force {}",
                    case,
                    res.value,
                    bf
                );
                optimal += 1;
            }
            LpStatus::Infeasible => {
                assert!(oracle.is_none(), "case {}: oracle found a feasible basic solution", case);
            }
            LpStatus::Unbounded => panic!("case {}: boxed LP cannot be unbounded", case),
        }
    }
    assert!(optimal > 100, "too few optimal instances: {}", optimal);
}

#[test]
fn vertex_enumeration_agrees_with_hull_lp_roundtrip() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    for _ in 0..150 {
        let (poly, c) = random_bounded_lp(&mut rng);
        let res = solve_lp(&poly, &c, Sense::Max).unwrap();
        if res.status != LpStatus::Optimal {
            continue;
        }
        let pt = enumerate_vertices(&poly).unwrap();
        assert!(pt.bounded());
        assert!(!pt.vertices.is_empty());
        let hull_best = pt
            .vertices
            .iter()
            .map(|v| c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (hull_best - res.value).abs() <= 1e-9 * (1.0 + res.value.abs()),
            "hull max {} vs LP {}",
            hull_best,
            res.value
        );
        checked += 1;
    }
    assert!(checked > 50);
}
