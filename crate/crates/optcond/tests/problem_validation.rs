use nalgebra::{DMatrix, DVector};
use optcond::builtins::{builtin_ids, builtin_problem, BUILTIN_STATE_BOX};
use optcond::ode::TimeGrid;
use optcond::problem::{
    audit_regularity, derivative_check_samples, validate_derivatives, ControlDomain, Modulus,
    PiecewiseControl, Problem,
};
use proptest::prelude::*;

#[test]
fn declared_derivatives_match_finite_differences_on_the_builtins() {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    for id in builtin_ids() {
        let inst = builtin_problem(id, &grid).unwrap();
        let samples =
            derivative_check_samples(&inst.problem, &inst.domain, 25, BUILTIN_STATE_BOX, 7);
        let report =
            validate_derivatives(&inst.problem, &inst.domain, &samples, 1e-5, 1e-6).unwrap();
        assert!(
            report.pass(),
            "{id}: flagged samples {:?}, worst error {}",
            report.flagged,
            report.max_relative_error
        );
        assert!(report.max_relative_error <= 1e-6);
    }
}

#[test]
fn regularity_audit_accepts_the_builtin_declarations() {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    for id in builtin_ids() {
        let inst = builtin_problem(id, &grid).unwrap();
        let report =
            audit_regularity(&inst.problem, &inst.domain, 200, Some(BUILTIN_STATE_BOX), 3)
                .unwrap();
        assert!(report.pass(), "{id}: violations {:?}", report.violations);
        assert!(report.empirical_lipschitz <= inst.problem.lipschitz() * (1.0 + 1e-9));
        assert!(report.empirical_modulus_ratio <= 1.0 + 1e-9);
    }
}

fn scalar_problem(
    name: &str,
    f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    jac: impl Fn(f64) -> f64 + Send + Sync + 'static,
    lipschitz: f64,
) -> Problem {
    Problem::builder(name, 1, 1.0)
        .initial_state(DVector::from_element(1, 0.0))
        .dynamics(move |_, x, _| DVector::from_element(1, f(x[0])))
        .running_cost(|_, _, _| 0.0)
        .jacobian(move |_, x, _| DMatrix::from_element(1, 1, jac(x[0])))
        .cost_gradient(|_, _, _| DVector::from_element(1, 0.0))
        .hessians(|_, _, _| vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)])
        .lipschitz(lipschitz)
        .modulus(Modulus::linear(1.0))
        .build()
        .unwrap()
}

#[test]
fn regularity_audit_flags_an_understated_lipschitz_constant() {
    let problem = scalar_problem("steep", |x| 3.0 * x, |_| 3.0, 1.0);
    let domain = ControlDomain::from_scalars(&[0.0]).unwrap();
    let report = audit_regularity(&problem, &domain, 50, Some(1.0), 5).unwrap();
    assert!(!report.pass());
    assert!(report
        .violations
        .iter()
        .all(|v| v.condition == "lipschitz in state"));
    assert!(report.empirical_lipschitz >= 3.0 - 1e-9);
}

#[test]
fn derivative_validation_flags_a_wrong_jacobian() {
    let problem = scalar_problem("wrong-jac", |x| x * x, |x| x, 5.0);
    let domain = ControlDomain::from_scalars(&[0.0]).unwrap();
    let samples = vec![(0.5, DVector::from_element(1, 1.0), 0)];
    let report = validate_derivatives(&problem, &domain, &samples, 1e-5, 1e-6).unwrap();
    assert!(!report.pass());
    assert_eq!(report.flagged, vec![0]);
}

#[test]
fn the_large_interval_domain_satisfies_the_metric_axioms_on_every_triple() {
    let domain = ControlDomain::sampled_interval(-2.0, 2.0, 401).unwrap();
    assert_eq!(domain.len(), 401);
    assert_eq!(domain.point(0).unwrap().as_scalar(), -2.0);
    assert_eq!(domain.point(400).unwrap().as_scalar(), 2.0);
    domain.validate_metric_full().unwrap();
}

#[test]
fn domain_construction_rejects_a_triangle_violation() {
    let points = vec![0.0_f64, 1.0, 2.0]
        .into_iter()
        .map(optcond::problem::DomainPoint::scalar)
        .collect();
    let labels = vec!["a".into(), "b".into(), "c".into()];
    let err = ControlDomain::new(points, labels, |a, b| {
        let d = (a.as_scalar() - b.as_scalar()).abs();
        if d > 1.5 {
            10.0
        } else {
            d
        }
    })
    .unwrap_err();
    assert!(err.to_string().contains("triangle inequality"));
}

#[test]
fn domain_construction_rejects_empty_and_asymmetric_inputs() {
    assert!(ControlDomain::from_scalars(&[]).is_err());

    let points = vec![
        optcond::problem::DomainPoint::scalar(0.0),
        optcond::problem::DomainPoint::scalar(1.0),
    ];
    let labels = vec!["a".into(), "b".into()];
    let err = ControlDomain::new(points, labels, |a, b| {
        if a.as_scalar() < b.as_scalar() {
            2.0
        } else {
            (a.as_scalar() - b.as_scalar()).abs()
        }
    })
    .unwrap_err();
    assert!(err.to_string().contains("symmetric"));
}

#[test]
fn the_builder_rejects_incomplete_or_inconsistent_data() {
    let missing_dynamics = Problem::builder("partial", 1, 1.0)
        .initial_state(DVector::from_element(1, 0.0))
        .running_cost(|_, _, _| 0.0)
        .jacobian(|_, _, _| DMatrix::zeros(1, 1))
        .cost_gradient(|_, _, _| DVector::zeros(1))
        .hessians(|_, _, _| vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)])
        .lipschitz(1.0)
        .build();
    assert!(missing_dynamics.is_err());

    let wrong_x0 = Problem::builder("bad-x0", 2, 1.0)
        .initial_state(DVector::from_element(1, 0.0))
        .dynamics(|_, _, _| DVector::zeros(2))
        .running_cost(|_, _, _| 0.0)
        .jacobian(|_, _, _| DMatrix::zeros(2, 2))
        .cost_gradient(|_, _, _| DVector::zeros(2))
        .hessians(|_, _, _| vec![DMatrix::zeros(2, 2); 3])
        .lipschitz(1.0)
        .build();
    assert!(wrong_x0.is_err());

    let bad_horizon = Problem::builder("bad-horizon", 1, -1.0)
        .initial_state(DVector::from_element(1, 0.0))
        .dynamics(|_, _, _| DVector::zeros(1))
        .running_cost(|_, _, _| 0.0)
        .jacobian(|_, _, _| DMatrix::zeros(1, 1))
        .cost_gradient(|_, _, _| DVector::zeros(1))
        .hessians(|_, _, _| vec![DMatrix::zeros(1, 1); 2])
        .lipschitz(1.0)
        .build();
    assert!(bad_horizon.is_err());
}

#[test]
fn control_checks_catch_domain_and_grid_mismatches() {
    let domain = ControlDomain::from_scalars(&[-1.0, 0.0, 1.0]).unwrap();
    let out_of_range = PiecewiseControl::from_values(vec![0, 1, 5, 2]).unwrap();
    assert!(out_of_range.check_domain(&domain).is_err());

    let control = PiecewiseControl::constant(0, 10).unwrap();
    assert!(control.check_intervals(10).is_ok());
    assert!(control.check_intervals(11).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_intervals_pin_endpoints_and_stay_sorted(
        lo in -10.0_f64..10.0,
        width in 0.1_f64..20.0,
        m in 2_usize..50,
    ) {
        let hi = lo + width;
        let domain = ControlDomain::sampled_interval(lo, hi, m).unwrap();
        prop_assert_eq!(domain.len(), m);
        prop_assert_eq!(domain.point(0).unwrap().as_scalar(), lo);
        prop_assert_eq!(domain.point(m - 1).unwrap().as_scalar(), hi);
        for i in 1..m {
            prop_assert!(
                domain.point(i).unwrap().as_scalar() > domain.point(i - 1).unwrap().as_scalar()
            );
        }
    }

    #[test]
    fn nearest_scalar_agrees_with_a_linear_scan(
        lo in -5.0_f64..5.0,
        width in 0.1_f64..10.0,
        m in 2_usize..40,
        v in -20.0_f64..20.0,
    ) {
        let domain = ControlDomain::sampled_interval(lo, lo + width, m).unwrap();
        let picked = domain.nearest_scalar(v);
        let picked_d = (domain.point(picked).unwrap().as_scalar() - v).abs();
        for j in 0..m {
            let d = (domain.point(j).unwrap().as_scalar() - v).abs();
            prop_assert!(picked_d <= d);
            if j < picked {
                prop_assert!(d > picked_d);
            }
        }
    }
}
