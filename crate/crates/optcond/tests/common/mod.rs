#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use optcond::builtins::BuiltinInstance;
use optcond::ode::TimeGrid;
use optcond::problem::{ControlDomain, Modulus, PiecewiseControl, Problem};

pub struct NonlinearInstance {
    pub problem: Problem,
    pub domain: ControlDomain,
    pub candidate: PiecewiseControl,
}

/// Scalar fixture with a genuinely state-dependent Jacobian and dynamics
/// Hessian: `dx/dt = sin(x) + u` over the three-point domain `{-1, 0, 1}`,
/// cost `x^2`, candidate `u = 0`. Nothing here is optimal; the point is to
/// exercise the solvers off the linear-dynamics path of the built-ins.
pub fn nonlinear_instance(grid: &TimeGrid) -> NonlinearInstance {
    let problem = Problem::builder("sin-drift", 1, 1.0)
        .initial_state(DVector::from_element(1, 0.3))
        .dynamics(|_t, x, u| DVector::from_element(1, x[0].sin() + u.as_scalar()))
        .running_cost(|_t, x, _u| x[0] * x[0])
        .jacobian(|_t, x, _u| DMatrix::from_element(1, 1, x[0].cos()))
        .cost_gradient(|_t, x, _u| DVector::from_element(1, 2.0 * x[0]))
        .hessians(|_t, x, _u| {
            vec![
                DMatrix::from_element(1, 1, 2.0),
                DMatrix::from_element(1, 1, -x[0].sin()),
            ]
        })
        .lipschitz(11.0)
        .modulus(Modulus::linear(1.0))
        .build()
        .unwrap();
    let domain = ControlDomain::from_scalars(&[-1.0, 0.0, 1.0]).unwrap();
    let candidate = PiecewiseControl::constant(1, grid.intervals()).unwrap();
    NonlinearInstance {
        problem,
        domain,
        candidate,
    }
}

/// The probe the batch front-end defaults to: the domain point nearest zero,
/// or the last point when the candidate already sits there throughout.
pub fn default_probe(inst: &BuiltinInstance, intervals: usize) -> PiecewiseControl {
    let near_zero = inst.domain.nearest_scalar(0.0);
    let index = if inst.candidate.interval_values().iter().all(|v| *v == near_zero) {
        inst.domain.len() - 1
    } else {
        near_zero
    };
    PiecewiseControl::constant(index, intervals).unwrap()
}
