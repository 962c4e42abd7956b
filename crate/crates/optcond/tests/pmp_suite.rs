mod common;

use optcond::builtins::{builtin_ids, builtin_problem};
use optcond::families::{generate_family, random_controls, FamilySpec};
use optcond::ode::TimeGrid;
use optcond::pmp::{
    first_order_gap, first_quotient_oracle, is_singular, pmp_residual, singular_set,
    SingularTolerance,
};
use optcond::problem::PiecewiseControl;
use optcond::trajectories::{solve_adjoint, solve_state};

const ETA_PMP: f64 = 2e-3;

struct Solved {
    inst: optcond::builtins::BuiltinInstance,
    x_bar: optcond::ode::GridFunction<nalgebra::DVector<f64>>,
    psi: optcond::ode::GridFunction<nalgebra::DVector<f64>>,
}

fn solve(id: &str, grid: &TimeGrid) -> Solved {
    let inst = builtin_problem(id, grid).unwrap();
    let base = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), grid).unwrap();
    let psi = solve_adjoint(&inst.problem, &inst.domain, &base, &inst.candidate, grid).unwrap();
    Solved {
        x_bar: base.x,
        psi,
        inst,
    }
}

#[test]
fn candidate_maximization_gaps_stay_nonnegative_over_whole_families() {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let spec = FamilySpec {
        constants: true,
        switches: 10,
        random: 20,
        seed: 11,
    };
    for id in builtin_ids() {
        let s = solve(id, &grid);
        let report = pmp_residual(
            &s.inst.problem,
            &s.inst.domain,
            &s.inst.candidate,
            &s.x_bar,
            &s.psi,
            &grid,
            ETA_PMP,
        )
        .unwrap();
        assert!(report.pass, "{id}: candidate fails its own maximum condition");
        for (i, u) in generate_family(&s.inst.domain, grid.intervals(), &spec)
            .unwrap()
            .iter()
            .enumerate()
        {
            let gap = first_order_gap(
                &s.inst.problem,
                &s.inst.domain,
                &s.inst.candidate,
                u,
                &s.x_bar,
                &s.psi,
                &grid,
            )
            .unwrap();
            assert!(gap >= -1e-9, "{id}: member {i} has maximization gap {gap}");
        }
    }
}

#[test]
fn every_control_is_singular_when_the_adjoint_vanishes() {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let spec = FamilySpec {
        constants: true,
        switches: 10,
        random: 20,
        seed: 11,
    };
    for id in ["P1", "P2"] {
        let s = solve(id, &grid);
        let set = singular_set(
            &s.inst.problem,
            &s.inst.domain,
            &s.x_bar,
            &s.psi,
            &grid,
            SingularTolerance::default(),
        )
        .unwrap();
        for (i, u) in generate_family(&s.inst.domain, grid.intervals(), &spec)
            .unwrap()
            .iter()
            .enumerate()
        {
            let (flag, measure) = is_singular(&set, u, &grid, 0.0).unwrap();
            assert!(flag, "{id}: member {i} excluded with measure {measure}");
        }
    }
}

#[test]
fn one_hundred_seeded_random_controls_are_singular_on_the_sign_flipped_problem() {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let s = solve("P2", &grid);
    let set = singular_set(
        &s.inst.problem,
        &s.inst.domain,
        &s.x_bar,
        &s.psi,
        &grid,
        SingularTolerance::default(),
    )
    .unwrap();
    let members = random_controls(&s.inst.domain, grid.intervals(), 100, 29).unwrap();
    assert_eq!(members.len(), 100);
    for (i, u) in members.iter().enumerate() {
        let (flag, _) = is_singular(&set, u, &grid, 0.0).unwrap();
        assert!(flag, "member {i} not singular");
    }
}

#[test]
fn no_generated_family_member_is_singular_on_the_tracking_problem() {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let s = solve("P3", &grid);
    let set = singular_set(
        &s.inst.problem,
        &s.inst.domain,
        &s.x_bar,
        &s.psi,
        &grid,
        SingularTolerance::Absolute(ETA_PMP),
    )
    .unwrap();
    let spec = FamilySpec {
        constants: true,
        switches: 10,
        random: 20,
        seed: 11,
    };
    for (i, u) in generate_family(&s.inst.domain, grid.intervals(), &spec)
        .unwrap()
        .iter()
        .enumerate()
    {
        let (flag, measure) = is_singular(&set, u, &grid, 0.0).unwrap();
        assert!(
            !flag,
            "member {i} unexpectedly tracks the maximizer (measure {measure})"
        );
    }
}

#[test]
fn the_argmax_selection_is_singular_and_first_order_flat_on_the_tracking_problem() {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let s = solve("P3", &grid);
    let set = singular_set(
        &s.inst.problem,
        &s.inst.domain,
        &s.x_bar,
        &s.psi,
        &grid,
        SingularTolerance::Absolute(ETA_PMP),
    )
    .unwrap();
    let values: Vec<usize> = (0..grid.intervals()).map(|k| set.argmax[k]).collect();
    let tracker = PiecewiseControl::from_values(values).unwrap();
    let (flag, measure) = is_singular(&set, &tracker, &grid, grid.step()).unwrap();
    assert!(flag, "pointwise maximizer excluded with measure {measure}");
    let gap = first_order_gap(
        &s.inst.problem,
        &s.inst.domain,
        &s.inst.candidate,
        &tracker,
        &s.x_bar,
        &s.psi,
        &grid,
    )
    .unwrap();
    assert!(
        gap.abs() <= ETA_PMP * 1.0 + 1e-6,
        "tracker gap {gap} exceeds the tolerance budget"
    );
}

#[test]
fn the_cost_quotient_converges_to_the_maximization_gap_at_first_order() {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let s = solve("P3", &grid);
    let probe = common::default_probe(&s.inst, grid.intervals());
    let report = first_quotient_oracle(
        &s.inst.problem,
        &s.inst.domain,
        &s.inst.candidate,
        &probe,
        &s.x_bar,
        &s.psi,
        &[0.2, 0.1, 0.05],
        &grid,
    )
    .unwrap();
    assert!(report.converged, "errors failed to decrease: {:?}", report.rows);
    for pair in report.rows.windows(2) {
        let ratio = pair[0].error / pair[1].error;
        assert!(
            (1.6..=2.4).contains(&ratio),
            "halving ratio {ratio} outside the first-order window"
        );
    }
    assert!(report.target > 0.1, "maximization gap {}", report.target);
}
