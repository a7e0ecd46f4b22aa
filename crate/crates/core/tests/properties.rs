use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ebif::control::{costate_control_lifted, FlowEvaluator};
use ebif::engine::{ebif_run, extract_bilinear, BilinearRealization, ConstantMode, EbifConfig, NonlinearSystem};
use ebif::sim::{expm, simulate_nonlinear_rk4, ControlSchedule};
use ebif::symbolic::{parse_expr, CanonicalExpr, FunctionSpace, Rational, VectorField};

const FACTORS: &[&str] = &["1", "x1", "x2", "x1^2", "sin(x1)", "cos(x2 - x1)", "exp(x2/2)", "sin(2*x1 + x2)"];

/// Sum of up to four terms `c * f_a * f_b` over a small atom vocabulary in two variables.
fn expr_text() -> impl Strategy<Value = String> {
    prop::collection::vec((-5i32..=5, 1i32..=3, 0..FACTORS.len(), 0..FACTORS.len()), 1..=4).prop_map(|terms| {
        terms
            .into_iter()
            .map(|(p, d, a, b)| format!("({}/{})*{}*{}", p, d, FACTORS[a], FACTORS[b]))
            .collect::<Vec<_>>()
            .join(" + ")
    })
}

fn expr() -> impl Strategy<Value = CanonicalExpr> {
    expr_text().prop_map(|s| parse_expr(&s, 2).unwrap())
}

fn field() -> impl Strategy<Value = VectorField> {
    (expr(), expr()).prop_map(|(a, b)| VectorField::new(vec![a, b]).unwrap())
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 2)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn unicycle() -> BilinearRealization {
    let sys = unicycle_system();
    let cfg = EbifConfig::coordinates(3).with_mode(ConstantMode::Augment);
    extract_bilinear(&sys, &ebif_run(&sys, &cfg).unwrap(), &cfg).unwrap()
}

fn unicycle_system() -> NonlinearSystem {
    NonlinearSystem::parse("unicycle", 3, &["0", "0", "0"], &[vec!["cos(x3)", "sin(x3)", "0"], vec!["0", "0", "1"]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_form_is_unique(a in expr(), b in expr(), c in expr()) {
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        prop_assert_eq!(a.mul(&b).unwrap().mul(&c).unwrap(), a.mul(&b.mul(&c).unwrap()).unwrap());
        prop_assert_eq!(
            a.mul(&b.add(&c).unwrap()).unwrap(),
            a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap()
        );
        prop_assert!(a.sub(&a).unwrap().is_zero());
        // printing and re-parsing lands on the same canonical form
        prop_assert_eq!(parse_expr(&a.to_string(), 2).unwrap(), a);
    }

    #[test]
    fn numeric_evaluation_is_faithful(a in expr(), b in expr(), x in point()) {
        let (va, vb) = (a.eval(&x), b.eval(&x));
        prop_assert!(close(a.add(&b).unwrap().eval(&x), va + vb, 1e-10));
        prop_assert!(close(a.mul(&b).unwrap().eval(&x), va * vb, 1e-10));
        prop_assert!(close(a.compile().eval(&x), va, 1e-12));
    }

    #[test]
    fn partial_matches_finite_difference(a in expr(), x in point()) {
        for i in 0..2 {
            let h = 1e-5;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (a.eval(&xp) - a.eval(&xm)) / (2.0 * h);
            prop_assert!(close(a.partial(i).unwrap().eval(&x), fd, 1e-5));
        }
    }

    #[test]
    fn lie_derivative_obeys_leibniz(a in expr(), b in expr(), f in field()) {
        let lhs = a.mul(&b).unwrap().lie_derivative(&f).unwrap();
        let rhs = a
            .lie_derivative(&f)
            .unwrap()
            .mul(&b)
            .unwrap()
            .add(&a.mul(&b.lie_derivative(&f).unwrap()).unwrap())
            .unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn lie_derivative_is_linear(a in expr(), b in expr(), f in field(), p in -7i64..7, d in 1i64..5) {
        let c = Rational::new(p.into(), d.into());
        let lhs = a.add(&b.scale(&c)).unwrap().lie_derivative(&f).unwrap();
        let rhs = a.lie_derivative(&f).unwrap().add(&b.lie_derivative(&f).unwrap().scale(&c)).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn bracket_is_antisymmetric(f in field(), g in field()) {
        prop_assert_eq!(f.bracket(&g).unwrap(), g.bracket(&f).unwrap().neg());
        prop_assert!(f.bracket(&f).unwrap().is_zero());
    }

    #[test]
    fn reduce_is_idempotent(gens in prop::collection::vec(expr(), 1..6)) {
        let once = FunctionSpace::reduce(2, &gens).unwrap();
        let twice = FunctionSpace::reduce(2, once.basis()).unwrap();
        prop_assert_eq!(once.basis(), twice.basis());
        for g in &gens {
            prop_assert!(once.contains(g).unwrap().is_some());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_is_a_semigroup(entries in prop::collection::vec(-2.0f64..2.0, 16), s in 0.0f64..1.5, t in 0.0f64..1.5) {
        let a = DMatrix::from_vec(4, 4, entries);
        let lhs = expm(&(&a * (s + t))).unwrap();
        let rhs = expm(&(&a * s)).unwrap() * expm(&(&a * t)).unwrap();
        let scale = lhs.amax().max(1.0);
        prop_assert!((lhs - rhs).amax() <= 1e-10 * scale);
    }

    #[test]
    fn costate_control_is_linear_in_costate(
        l1 in prop::collection::vec(-3.0f64..3.0, 6),
        l2 in prop::collection::vec(-3.0f64..3.0, 6),
        x in prop::collection::vec(-1.0f64..1.0, 3),
        c in -2.0f64..2.0,
    ) {
        let real = unicycle();
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let z = real.lift(&x);
        let (l1, l2) = (DVector::from_vec(l1), DVector::from_vec(l2));
        let u1 = costate_control_lifted(&real, &l1, &z, &r).unwrap();
        let u2 = costate_control_lifted(&real, &l2, &z, &r).unwrap();
        let u = costate_control_lifted(&real, &(&l1 + &l2 * c), &z, &r).unwrap();
        prop_assert!((u - (u1 + u2 * c)).amax() <= 1e-12 * (1.0 + l1.amax() + l2.amax()));
    }

    #[test]
    fn lifted_shooting_matches_nonlinear_flow(
        values in prop::collection::vec(-1.5f64..1.5, 6),
        x0 in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let real = unicycle();
        let eval = FlowEvaluator::new(&real, &x0).unwrap();
        let lifted = eval.endpoint(&values, 1.5, 3).unwrap();
        let sched = ControlSchedule::uniform(1.5, values.chunks(2).map(|c| c.to_vec()).collect()).unwrap();
        let traj = simulate_nonlinear_rk4(&unicycle_system(), &sched, &x0, 1e-3).unwrap();
        for (a, b) in lifted.iter().zip(traj.last_state()) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn steering_gradient_passes_richardson_check(values in prop::collection::vec(-1.0f64..1.0, 4), k in 0usize..4) {
        // Richardson extrapolation of central differences at h and h/2 matches a fine-step difference.
        let real = unicycle();
        let eval = FlowEvaluator::new(&real, &[0.1, -0.2, 0.3]).unwrap();
        let target = [0.5, 0.4, -0.2];
        let j = |v: &[f64]| -> f64 {
            eval.endpoint(v, 1.0, 2).unwrap().iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let slope = |h: f64| {
            let mut p = values.clone();
            let mut m = values.clone();
            p[k] += h;
            m[k] -= h;
            (j(&p) - j(&m)) / (2.0 * h)
        };
        let (d1, d2) = (slope(1e-2), slope(5e-3));
        let extrapolated = (4.0 * d2 - d1) / 3.0;
        prop_assert!(close(extrapolated, slope(1e-4), 1e-6));
    }
}
