use std::collections::BTreeSet;

use fobs_core::cstr::{
    self, analytic_design, deviation_system, run_case_study, run_case_study_with, CstrParams,
    CstrReference,
};
use fobs_core::expr;
use fobs_core::io::{LoadedSystem, SystemSpecFile};
use fobs_core::nonlinear_design::{
    build_t_nonlinear, check_condition, fit_beta, residual_51, verify_design_conditions,
    IDENTITY_TOL,
};
use fobs_core::{BetaCoefficients, SampleSet, SystemModel, Transformation};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHIPPED_SPEC: &str = include_str!("../../../data/cstr.json");
const SHIPPED_BETA: &str = include_str!("../../../data/cstr_beta.json");

fn setup() -> (CstrParams, CstrReference, fobs_core::NonlinearSystem) {
    let p = CstrParams::default();
    let r = CstrReference::steady_state(&p).unwrap();
    let sys = deviation_system(&p, &r).unwrap();
    (p, r, sys)
}

/// Stable jacket update: the jacket volume is raised so `1 - δt(F_j/V_j +
/// U S_A/(ρ_j c_pj V_j))` lies inside the unit interval.
fn stable_jacket() -> CstrParams {
    CstrParams {
        jacket_volume: 1.0,
        ..CstrParams::default()
    }
}

#[test]
fn analytic_beta_satisfies_identity_on_box() {
    let (p, _, sys) = setup();
    let d = analytic_design(&p).unwrap();
    let samples = SampleSet::uniform(sys.domain(), 1000, 7).unwrap();
    let rep = check_condition(&sys, &d.poly, &d.beta, &samples).unwrap();
    assert!(rep.satisfied, "{rep:?}");
    assert!(rep.max_residual <= IDENTITY_TOL * rep.scale);
    let t = build_t_nonlinear(&sys, &d.poly, &d.beta).unwrap();
    let dc = verify_design_conditions(&sys, &d.observer, &t, &samples).unwrap();
    assert!(dc.certified, "{dc:?}");
}

#[test]
fn perturbed_beta_is_detected() {
    let (p, _, sys) = setup();
    let d = analytic_design(&p).unwrap();
    let beta = BetaCoefficients::from_rows(&[&d.beta0, &[d.beta1[0] + 0.01, d.beta1[1]]]).unwrap();
    let x = DVector::from_vec(vec![0.1, -0.2, 7.0, -3.0]);
    assert!(residual_51(&sys, &d.poly, &beta, &x).unwrap().abs() >= 1e-4);
}

#[test]
fn fit_is_degenerate_along_the_jacket_direction() {
    let (p, _, sys) = setup();
    let d = analytic_design(&p).unwrap();
    let train = SampleSet::uniform(sys.domain(), 500, 1).unwrap();
    let validate = SampleSet::uniform(sys.domain(), 500, 2).unwrap();
    let fit = fit_beta(&sys, &d.poly, &train, &validate).unwrap();
    assert!(fit.candidate, "{fit:?}");
    assert_eq!(fit.unknowns, 4);
    assert_eq!(fit.rank, 3);
    assert!(fit.degenerate());

    // θ_j∘F is linear in (θ, θ_j), so (0, 1, -a, -b) spans the null space
    let a = p.dt * p.jacket_exchange();
    let b = p.jacket_step_factor();
    let null = DVector::from_vec(vec![0.0, 1.0, -a, -b]);
    let diff = DVector::from_vec(d.beta.to_flat()) - DVector::from_vec(fit.beta.to_flat());
    let s = diff.dot(&null) / null.norm_squared();
    assert!(
        (diff - &null * s).amax() <= 1e-6,
        "difference is not along the null direction"
    );
    // minimum norm: orthogonal to the null direction
    assert!(DVector::from_vec(fit.beta.to_flat()).dot(&null).abs() <= 1e-6);
}

#[test]
fn realized_observer_matches_closed_form() {
    for p in [CstrParams::default(), stable_jacket()] {
        let d = analytic_design(&p).unwrap();
        let e = cstr::explicit_observer(&p);
        assert!((d.observer.a[(0, 0)] - e.a).abs() <= 1e-12);
        assert!((d.observer.b[(0, 0)] - e.b1).abs() <= 1e-12);
        assert!((d.observer.b[(0, 1)] - e.b2).abs() <= 1e-12);
        assert!((d.observer.c[0] - 1.0).abs() <= 1e-12);
        assert!((d.observer.d[0] - e.d1).abs() <= 1e-12);
        assert!((d.observer.d[1] - e.d2).abs() <= 1e-12);
    }
}

#[test]
fn default_run_matches_error_law_until_divergence() {
    let case = run_case_study(1.0, cstr::DEFAULT_HORIZON).unwrap();
    let err = case.trajectory.estimation_error();
    assert_eq!(err[0], 1.0);
    let k_fail = case.trajectory.failed_at.expect("jacket update diverges");
    assert!(k_fail < 20);
    for (k, e) in err.iter().enumerate().take(6) {
        assert!((e - 0.9_f64.powi(k as i32)).abs() <= 1e-8);
    }
    assert!(case.diagnostics.iter().any(|d| d.contains("jacket")));
}

#[test]
fn stable_jacket_variant_reproduces_geometric_decay() {
    let p = stable_jacket();
    assert!(p.jacket_step_factor().abs() < 1.0);
    let case = run_case_study_with(&p, 1.0, cstr::DEFAULT_HORIZON).unwrap();
    assert!(case.trajectory.is_complete());
    let err = case.trajectory.estimation_error();
    assert_eq!(err[0], 1.0);
    for (k, e) in err.iter().enumerate().take(101) {
        assert!((e - 0.9_f64.powi(k as i32)).abs() <= 1e-8, "k = {k}: {e}");
    }
    for k in 1..=100 {
        if err[k - 1].abs() > 1e-12 {
            assert!((err[k] / err[k - 1] - 0.9).abs() <= 1e-6);
        }
    }
    assert!(err[88].abs() < 1e-4);
    assert!(case.analysis.max_dev <= 1e-8);

    let z = case.z_abs();
    let z_hat = case.z_hat_abs();
    assert!((z_hat[300] - z[300]).abs() < 1e-9);

    let consistent = run_case_study_with(&p, 0.0, 500).unwrap();
    let scale = consistent
        .z_abs()
        .iter()
        .fold(1.0_f64, |m, z| m.max(z.abs()));
    let worst = consistent
        .trajectory
        .estimation_error()
        .iter()
        .fold(0.0_f64, |m, e| m.max(e.abs()));
    assert!(worst <= 1e-9 * scale, "{worst:e}");
}

#[test]
fn shipped_spec_matches_generator() {
    let shipped = SystemSpecFile::from_json(SHIPPED_SPEC).unwrap();
    assert_eq!(shipped, cstr::spec_file(&CstrParams::default()).unwrap());
    let beta: serde_json::Value = serde_json::from_str(SHIPPED_BETA).unwrap();
    let d = analytic_design(&CstrParams::default()).unwrap();
    let rows: Vec<Vec<f64>> = serde_json::from_value(beta["beta"].clone()).unwrap();
    assert_eq!(rows, vec![d.beta0.to_vec(), d.beta1.to_vec()]);
}

#[test]
fn expression_model_matches_built_in() {
    let (p, r, sys) = setup();
    let LoadedSystem::Nonlinear(es) = cstr::spec_file(&p).unwrap().load().unwrap() else {
        panic!("expected a nonlinear spec");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let x = DVector::from_fn(4, |i, _| {
            let w = cstr::DEVIATION_HALF_WIDTHS[i];
            rng.gen_range(-w..w)
        });
        let a = es.system.step(&x);
        let b = sys.step(&x);
        let scale = b.amax().max(1.0);
        assert!((a - &b).amax() <= 1e-12 * scale);
        assert_eq!(es.system.output(&x), sys.output(&x));
        assert!((es.system.functional(&x) - sys.functional(&x)).abs() <= 1e-12);

        let abs = &x + r.to_vector();
        let rate = cstr::reaction_rate(abs[0], abs[1], abs[2], &p).unwrap();
        let names: BTreeSet<String> = es.params.keys().cloned().collect();
        let e = expr::parse(
            &cstr::rate_expression("(x1 + CAr)", "(x2 + CBr)", "(x3 + thr)"),
            4,
            &names,
        )
        .unwrap();
        let v = e.eval(x.as_slice(), &es.params).unwrap();
        assert!((v - rate).abs() <= 1e-12 * rate.abs().max(1e-300));
    }
}

#[test]
fn transformation_expressions_evaluate_to_t() {
    let p = CstrParams::default();
    let LoadedSystem::Nonlinear(es) = cstr::spec_file(&p).unwrap().load().unwrap() else {
        panic!("expected a nonlinear spec");
    };
    let d = analytic_design(&p).unwrap();
    let t = build_t_nonlinear(&es.system, &d.poly, &d.beta).unwrap();
    let names: BTreeSet<String> = es.params.keys().cloned().collect();
    let exprs: Vec<_> = es
        .transformation_expressions(&d.poly, &d.beta)
        .iter()
        .map(|s| expr::parse(s, 4, &names).unwrap())
        .collect();
    let samples = SampleSet::uniform(es.system.domain(), 50, 5).unwrap();
    for x in samples.points() {
        let tx = t.eval(x).unwrap();
        for (r, e) in exprs.iter().enumerate() {
            assert!(
                (e.eval(x.as_slice(), &es.params).unwrap() - tx[r]).abs()
                    <= 1e-12 * tx.amax().max(1.0)
            );
        }
    }
}
