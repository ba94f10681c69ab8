use proptest::prelude::*;
use rce_core::coeffexpr::parse_expression;
use rce_core::family::{family_trajectory, family_value, fit_branch_and_k, phase_accumulator, rce_residual};
use rce_core::odeengine::integrate_rce;
use rce_core::primitive::decompose_to_primitive;
use rce_core::reduction::{lti_characteristic_pair, reduce_general_riccati, LtiKind};
use rce_core::timedomain::{reconstruct_member, wronskian};
use rce_core::{
    Branch, CoefficientFn, Complex64, FamilySolution, GeneralRiccati, IntegrateOptions, IntrinsicKind, PrimitivePair,
    ReducedRCE, TimeGrid, Tolerance, Window,
};

fn constant_rce(w02: f64, t1: f64) -> ReducedRCE {
    let c = CoefficientFn::constant;
    reduce_general_riccati(&GeneralRiccati { s2: c(-1.0), s1: c(0.0), s0: c(w02) }, &Window::new(0.0, t1).unwrap()).unwrap()
}

fn constant_pair(s: f64, kind: IntrinsicKind, t1: f64, n: usize) -> PrimitivePair {
    let g = TimeGrid::uniform(0.0, t1, n).unwrap();
    PrimitivePair::new(g, vec![0.0; n], vec![s; n], kind).unwrap()
}

fn branch_for(kind: IntrinsicKind, pick: bool) -> Branch {
    match (kind, pick) {
        (IntrinsicKind::Real, true) => Branch::Tanh,
        (IntrinsicKind::Real, false) => Branch::Coth,
        (IntrinsicKind::Imaginary, true) => Branch::Tan,
        (IntrinsicKind::Imaginary, false) => Branch::Cot,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lti_roots_match_vieta(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -20.0f64..20.0) {
        prop_assume!(a.abs() > 1e-3);
        let p = lti_characteristic_pair(a, b, c).unwrap();
        let [r1, r2] = p.roots();
        let scale = 1.0 + (b / a).abs() + (c / a).abs();
        prop_assert!((r1 + r2 + b / a).norm() <= 1e-12 * scale);
        prop_assert!((r1 * r2 - c / a).norm() <= 1e-12 * scale);
        if p.kind == LtiKind::Imaginary {
            prop_assert!(p.lambda_i > 0.0 && r1 == r2.conj());
        }
    }

    #[test]
    fn fitted_member_reproduces_its_initial_value(
        s in 0.2f64..3.0,
        ic in -10.0f64..10.0,
        k in 0usize..41,
        real in any::<bool>(),
    ) {
        let kind = if real { IntrinsicKind::Real } else { IntrinsicKind::Imaginary };
        let r = constant_rce(if real { s * s } else { -s * s }, 2.0);
        let pair = constant_pair(s, kind, 2.0, 41);
        let phi = phase_accumulator(&r, &pair, 0.0).unwrap();
        let t = pair.times()[k];
        let f = fit_branch_and_k(&pair, &phi, ic, t).unwrap();
        prop_assert!(f.branch.fits(kind));
        let v = family_value(&f, &pair, &phi, k);
        prop_assert!((v - ic).abs() <= 1e-9 * (1.0 + ic.abs()), "{v} vs {ic}");
    }

    #[test]
    fn every_member_solves_the_rce(
        s in 0.3f64..2.5,
        k in -3.0f64..8.0,
        pick in any::<bool>(),
        real in any::<bool>(),
    ) {
        let kind = if real { IntrinsicKind::Real } else { IntrinsicKind::Imaginary };
        let r = constant_rce(if real { s * s } else { -s * s }, 3.0);
        let pair = constant_pair(s, kind, 3.0, 1201);
        let phi = phase_accumulator(&r, &pair, 0.0).unwrap();
        let f = FamilySolution::new(branch_for(kind, pick), k, 0.0);
        let nu = family_trajectory(&f, &pair, &phi);
        prop_assert!(rce_residual(&r, pair.times(), &nu).unwrap() <= 1e-6);
    }

    #[test]
    fn complement_shares_k_and_switches_branch(k in -5.0f64..5.0, pick in any::<bool>(), real in any::<bool>()) {
        let kind = if real { IntrinsicKind::Real } else { IntrinsicKind::Imaginary };
        let f = FamilySolution::new(branch_for(kind, pick), k, 0.0);
        let c = f.complement();
        prop_assert_eq!(c.k, f.k);
        prop_assert_ne!(c.branch, f.branch);
        prop_assert!(c.branch.fits(kind));
        prop_assert_eq!(c.complement(), f);
    }

    #[test]
    fn constant_pair_survives_decomposition(s in 0.3f64..3.0, k in -2.0f64..6.0, pick in any::<bool>()) {
        let r = constant_rce(s * s, 4.0);
        let pair = constant_pair(s, IntrinsicKind::Real, 4.0, 401);
        let phi = phase_accumulator(&r, &pair, 0.0).unwrap();
        let nu = family_trajectory(&FamilySolution::new(branch_for(IntrinsicKind::Real, pick), k, 0.0), &pair, &phi);
        let back = decompose_to_primitive(&r, &pair.grid, &nu, IntrinsicKind::Real).unwrap();
        prop_assert!(back.distance(&pair) <= 1e-7, "{}", back.distance(&pair));
    }

    #[test]
    fn complementary_solutions_have_constant_wronskian(s in 0.3f64..2.0, k in -1.0f64..1.0, real in any::<bool>()) {
        let kind = if real { IntrinsicKind::Real } else { IntrinsicKind::Imaginary };
        let r = constant_rce(if real { s * s } else { -s * s }, 2.0);
        let pair = constant_pair(s, kind, 2.0, 201);
        let phi = phase_accumulator(&r, &pair, 0.0).unwrap();
        let f = FamilySolution::new(branch_for(kind, true), k, 0.0);
        let a = reconstruct_member(&r, &pair, &phi, &f, 1.0).unwrap();
        let b = reconstruct_member(&r, &pair, &phi, &f.complement(), 1.0).unwrap();
        let w = wronskian(&a, &b);
        prop_assert!(w[0].abs() > 1e-6);
        prop_assert!(w.iter().all(|x| (x - w[0]).abs() <= 1e-9 * w[0].abs()));
    }

    #[test]
    fn escape_below_the_separatrix_happens_on_schedule(s in 0.5f64..3.0, excess in 0.1f64..5.0) {
        let ic = -s - excess;
        let t_escape = (s / ic).atanh().abs() / s;
        let t1 = t_escape + 1.0;
        let r = constant_rce(s * s, t1);
        let g = TimeGrid::uniform(0.0, t1, 201).unwrap();
        let opts = IntegrateOptions::default().with_tol(Tolerance::new(1e-11, 1e-13));
        let tr = integrate_rce(&r, Complex64::new(ic, 0.0), &g, &opts).unwrap();
        prop_assert_eq!(tr.escape_events.len(), 1);
        prop_assert!((tr.escape_events[0].t_escape - t_escape).abs() <= 1e-6);
        prop_assert!(tr.values.last().unwrap().re > s);
    }

    #[test]
    fn derivative_agrees_with_central_difference(c0 in -3.0f64..3.0, c1 in -3.0f64..3.0, t in 0.5f64..3.0) {
        let src = format!("{c0}*t^3+sin({c1}*t)+exp(-t)/t");
        let e = parse_expression(&src).unwrap();
        let d = e.differentiate();
        let h = 1e-5;
        let fd = (e.eval(t + h).unwrap() - e.eval(t - h).unwrap()) / (2.0 * h);
        prop_assert!((d.eval(t).unwrap() - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
        let again = parse_expression(&e.to_string()).unwrap();
        prop_assert!((again.eval(t).unwrap() - e.eval(t).unwrap()).abs() <= 1e-12 * (1.0 + e.eval(t).unwrap().abs()));
    }
}
