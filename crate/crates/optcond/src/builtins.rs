//! Built-in benchmark problems with closed-form reference solutions.
//!
//! Three scalar problems cover the interesting regimes:
//!
//! * `P1`: single integrator, running cost `-x^2`, candidate `u = 0`. The
//!   candidate satisfies the first-order condition trivially (the Hamiltonian
//!   is control-independent along it) yet is not optimal; the second-order
//!   necessary test detects this.
//! * `P2`: same dynamics and domain, running cost `+x^2`, candidate `u = 0`.
//!   Here the candidate is the global minimizer and every check passes.
//! * `P3`: scalar linear-quadratic problem with control cost, candidate
//!   obtained by discretizing the exact Riccati feedback. The optimal value
//!   and adjoint have hyperbolic closed forms, which pins down the
//!   first-order machinery to four decimal places.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::TimeGrid;
use crate::problem::{ControlDomain, Modulus, PiecewiseControl, Problem};

/// Default sampling density for the `P3` interval domain.
pub const DEFAULT_DOMAIN_SAMPLES: usize = 401;

/// State box on which the built-in regularity constants are declared.
pub const BUILTIN_STATE_BOX: f64 = 5.0;

/// A registered problem with its control domain and the candidate control
/// under test.
#[derive(Clone, Debug)]
pub struct BuiltinInstance {
    pub id: String,
    pub title: &'static str,
    pub problem: Problem,
    pub domain: ControlDomain,
    pub candidate: PiecewiseControl,
}

pub fn builtin_ids() -> [&'static str; 3] {
    ["P1", "P2", "P3"]
}

/// Assemble a built-in instance on the given grid, with the default domain
/// sampling density.
pub fn builtin_problem(id: &str, grid: &TimeGrid) -> Result<BuiltinInstance> {
    builtin_problem_with(id, grid, DEFAULT_DOMAIN_SAMPLES)
}

/// Assemble a built-in instance, choosing the interval sampling density for
/// `P3` (ignored by `P1`/`P2`, whose domain is a fixed five-point set).
pub fn builtin_problem_with(
    id: &str,
    grid: &TimeGrid,
    domain_samples: usize,
) -> Result<BuiltinInstance> {
    match id {
        "P1" => integrator_instance(grid, false),
        "P2" => integrator_instance(grid, true),
        "P3" => lq_instance(grid, domain_samples),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

fn integrator_domain() -> &'static ControlDomain {
    static DOMAIN: OnceLock<ControlDomain> = OnceLock::new();
    DOMAIN.get_or_init(|| {
        ControlDomain::from_scalars(&[-1.0, -0.5, 0.0, 0.5, 1.0]).expect("valid scalar metric")
    })
}

fn integrator_instance(grid: &TimeGrid, positive_cost: bool) -> Result<BuiltinInstance> {
    let sign = if positive_cost { 1.0 } else { -1.0 };
    let problem = Problem::builder(
        if positive_cost { "P2" } else { "P1" },
        1,
        1.0,
    )
    .initial_state(DVector::from_element(1, 0.0))
    .dynamics(|_t, _x, u| DVector::from_element(1, u.as_scalar()))
    .running_cost(move |_t, x, _u| sign * x[0] * x[0])
    .jacobian(|_t, _x, _u| DMatrix::zeros(1, 1))
    .cost_gradient(move |_t, x, _u| DVector::from_element(1, 2.0 * sign * x[0]))
    .hessians(move |_t, _x, _u| {
        vec![
            DMatrix::from_element(1, 1, 2.0 * sign),
            DMatrix::zeros(1, 1),
        ]
    })
    .lipschitz(10.0)
    .modulus(Modulus::linear(1.0))
    .build()?;

    let domain = integrator_domain().clone();
    let zero_index = domain.nearest_scalar(0.0);
    let candidate = PiecewiseControl::constant(zero_index, grid.intervals())?;
    Ok(BuiltinInstance {
        id: if positive_cost { "P2".into() } else { "P1".into() },
        title: if positive_cost {
            "integrator-pos-square"
        } else {
            "integrator-neg-square"
        },
        problem,
        domain,
        candidate,
    })
}

fn lq_instance(grid: &TimeGrid, domain_samples: usize) -> Result<BuiltinInstance> {
    let problem = Problem::builder("P3", 1, 1.0)
        .initial_state(DVector::from_element(1, 1.0))
        .dynamics(|_t, _x, u| DVector::from_element(1, u.as_scalar()))
        .running_cost(|_t, x, u| x[0] * x[0] + u.as_scalar() * u.as_scalar())
        .jacobian(|_t, _x, _u| DMatrix::zeros(1, 1))
        .cost_gradient(|_t, x, _u| DVector::from_element(1, 2.0 * x[0]))
        .hessians(|_t, _x, _u| {
            vec![DMatrix::from_element(1, 1, 2.0), DMatrix::zeros(1, 1)]
        })
        .lipschitz(10.0)
        .modulus(Modulus::linear(5.0))
        .build()?;
    let domain = ControlDomain::sampled_interval(-2.0, 2.0, domain_samples)?;
    let candidate = riccati_candidate(grid, &domain);
    Ok(BuiltinInstance {
        id: "P3".into(),
        title: "scalar-LQ",
        problem,
        domain,
        candidate,
    })
}

/// Discretize the exact feedback `u(t) = -tanh(T - t) x(t)` onto the grid.
///
/// Each interval's value comes from evaluating the feedback at the interval
/// midpoint, with the midpoint state predicted by a half step under the
/// left-node feedback; a plain left-node march would lag the continuum
/// trajectory by a one-signed O(h) bias that is visible against the
/// closed-form optimal cost.
fn riccati_candidate(grid: &TimeGrid, domain: &ControlDomain) -> PiecewiseControl {
    let t_end = grid.t_end();
    let h = grid.step();
    let feedback = |t: f64, x: f64| -(t_end - t).tanh() * x;
    let snap = |v: f64| {
        let idx = domain.nearest_scalar(v);
        (idx, domain.point(idx).expect("nearest index in range").as_scalar())
    };
    let mut x = 1.0;
    let mut values = Vec::with_capacity(grid.intervals());
    for k in 0..grid.intervals() {
        let (_, u_pred) = snap(feedback(grid.node(k), x));
        let x_mid = x + 0.5 * h * u_pred;
        let (idx, u_val) = snap(feedback(grid.midpoint(k), x_mid));
        values.push(idx);
        x += h * u_val;
    }
    PiecewiseControl::from_values(values).expect("at least one interval")
}
