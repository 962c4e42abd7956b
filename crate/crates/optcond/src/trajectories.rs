//! Trajectory-level solvers: state and cost (plain or relaxed control),
//! adjoint, second-order adjoint, fundamental matrix pair, first and second
//! variational equations, and the transition-matrix representation of the
//! first variation.
//!
//! All derivative data enter through the problem's plain Jacobian and state
//! Hessians; transposes appear explicitly where an equation needs them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{
    integrate_stages, interval_cumtrap, interval_simpson, Direction, GridFunction, StagePoint,
    TimeGrid,
};
use crate::problem::{ControlDomain, ControlLaw, DomainPoint, PiecewiseControl, Problem};

/// A solved state trajectory with its cost.
#[derive(Clone, Debug)]
pub struct TrajectoryBundle {
    pub x: GridFunction<DVector<f64>>,
    /// Total cost of the run.
    pub j: f64,
    /// Human-readable provenance ("plain" or the mixture weight).
    pub control_desc: String,
}

/// Limits above which solver self-checks escalate to integrity errors, and
/// the defaults the check suite runs with.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IntegrityTolerances {
    /// Largest tolerated asymmetry of the second-order adjoint.
    pub w_asymmetry: f64,
    /// Largest tolerated sup-norm of `Phi PhiInv - I` at any node.
    pub phi_defect: f64,
    /// Largest tolerated relative gap in the trace identity.
    pub trace_gap: f64,
}

impl Default for IntegrityTolerances {
    fn default() -> Self {
        IntegrityTolerances {
            w_asymmetry: 1e-8,
            phi_defect: 1e-8,
            trace_gap: 1e-5,
        }
    }
}

fn resolved<'a>(
    domain: &'a ControlDomain,
    control: &PiecewiseControl,
) -> Result<Vec<&'a DomainPoint>> {
    control
        .interval_values()
        .iter()
        .map(|&i| domain.point(i))
        .collect()
}

/// Solve the controlled system forward and integrate its running cost.
///
/// A plain control drives `dx/dt = f(t, x, u_k)` on interval `k`; a mixture
/// blends the fields of its base and probe with weights `1 - alpha` and
/// `alpha` (and the running cost the same way). The cost quadrature is
/// interval-aware Simpson with the midpoint state taken as the endpoint
/// average, which is exact whenever the integrand is piecewise quadratic
/// between nodes.
pub fn solve_state(
    problem: &Problem,
    domain: &ControlDomain,
    law: ControlLaw<'_>,
    grid: &TimeGrid,
) -> Result<TrajectoryBundle> {
    law.check(domain, grid.intervals())?;
    let (x, control_desc) = match law {
        ControlLaw::Plain(c) => {
            let pts = resolved(domain, c)?;
            let x = integrate_stages(
                |sp: StagePoint, y: &DVector<f64>| problem.f(sp.t, y, pts[sp.interval]),
                problem.initial_state().clone(),
                grid,
                Direction::Forward,
            )?;
            (x, "plain".to_string())
        }
        ControlLaw::Mixture(m) => {
            let base = resolved(domain, &m.base)?;
            let probe = resolved(domain, &m.probe)?;
            let a = m.alpha;
            let x = integrate_stages(
                |sp: StagePoint, y: &DVector<f64>| {
                    let mut v = problem.f(sp.t, y, base[sp.interval]);
                    if a > 0.0 {
                        let fp = problem.f(sp.t, y, probe[sp.interval]);
                        v.axpy(a, &fp, 1.0 - a);
                    }
                    v
                },
                problem.initial_state().clone(),
                grid,
                Direction::Forward,
            )?;
            (x, format!("mixture(alpha={})", a))
        }
    };

    let j = match law {
        ControlLaw::Plain(c) => {
            let pts = resolved(domain, c)?;
            interval_simpson(grid, |sp| {
                let xs = x.stage_value(sp);
                problem.f0(sp.t, &xs, pts[sp.interval])
            })
        }
        ControlLaw::Mixture(m) => {
            let base = resolved(domain, &m.base)?;
            let probe = resolved(domain, &m.probe)?;
            let a = m.alpha;
            interval_simpson(grid, |sp| {
                let xs = x.stage_value(sp);
                let fb = problem.f0(sp.t, &xs, base[sp.interval]);
                if a > 0.0 {
                    (1.0 - a) * fb + a * problem.f0(sp.t, &xs, probe[sp.interval])
                } else {
                    fb
                }
            })
        }
    };
    if !j.is_finite() {
        return Err(Error::NonFinite {
            component: "cost integral",
            t: grid.t_end(),
        });
    }
    Ok(TrajectoryBundle { x, j, control_desc })
}

/// Solve the adjoint equation backward from `psi(T) = 0` along the candidate
/// trajectory: `dpsi/dt = -J^T psi + grad f0`.
pub fn solve_adjoint(
    problem: &Problem,
    domain: &ControlDomain,
    base: &TrajectoryBundle,
    candidate: &PiecewiseControl,
    grid: &TimeGrid,
) -> Result<GridFunction<DVector<f64>>> {
    candidate.check_intervals(grid.intervals())?;
    let pts = resolved(domain, candidate)?;
    let x = &base.x;
    integrate_stages(
        |sp: StagePoint, psi: &DVector<f64>| {
            let xs = x.stage_value(sp);
            let u = pts[sp.interval];
            let jac = problem.jac(sp.t, &xs, u);
            let mut d = problem.cost_grad(sp.t, &xs, u);
            d.gemv_tr(-1.0, &jac, psi, 1.0);
            d
        },
        DVector::zeros(problem.dim()),
        grid,
        Direction::Backward,
    )
}

/// Second-order adjoint with its measured symmetry defect. Values are
/// symmetrized after the defect is recorded.
#[derive(Clone, Debug)]
pub struct SecondAdjoint {
    pub w: GridFunction<DMatrix<f64>>,
    pub max_asymmetry: f64,
}

/// Hessian of the Hamiltonian in the state variables:
/// `sum_k psi_k f^k_xx - f0_xx`, all evaluated at one `(t, x, u)`.
pub fn hamiltonian_hessian(
    problem: &Problem,
    t: f64,
    x: &DVector<f64>,
    u: &DomainPoint,
    psi: &DVector<f64>,
) -> DMatrix<f64> {
    let stack = problem.hessian_stack(t, x, u);
    let n = problem.dim();
    let mut h = DMatrix::zeros(n, n);
    for k in 0..n {
        h.zip_apply(&stack[k + 1], |a, b| *a += psi[k] * b);
    }
    h.zip_apply(&stack[0], |a, b| *a -= b);
    h
}

/// Solve the second-order adjoint equation backward from `W(T) = 0`:
/// `dW/dt = -(J^T W + W J + H_xx)` along the candidate.
///
/// The solution of the exact equation is symmetric because the data are;
/// numerical asymmetry beyond `asymmetry_limit` signals a transpose fault
/// and is escalated rather than hidden by the final symmetrization.
pub fn solve_second_adjoint(
    problem: &Problem,
    domain: &ControlDomain,
    base: &TrajectoryBundle,
    candidate: &PiecewiseControl,
    psi: &GridFunction<DVector<f64>>,
    grid: &TimeGrid,
    asymmetry_limit: f64,
) -> Result<SecondAdjoint> {
    candidate.check_intervals(grid.intervals())?;
    let pts = resolved(domain, candidate)?;
    let x = &base.x;
    let n = problem.dim();
    let mut w = integrate_stages(
        |sp: StagePoint, wv: &DMatrix<f64>| {
            let xs = x.stage_value(sp);
            let ps = psi.stage_value(sp);
            let u = pts[sp.interval];
            let jac = problem.jac(sp.t, &xs, u);
            let mut d = hamiltonian_hessian(problem, sp.t, &xs, u, &ps);
            d.gemm_tr(1.0, &jac, wv, 1.0);
            d.gemm(1.0, wv, &jac, 1.0);
            d.neg_mut();
            d
        },
        DMatrix::zeros(n, n),
        grid,
        Direction::Backward,
    )?;

    let mut max_asymmetry = 0.0_f64;
    let mut worst_node = 0;
    for (k, m) in w.values().iter().enumerate() {
        let a = (m - m.transpose()).amax();
        if a > max_asymmetry {
            max_asymmetry = a;
            worst_node = k;
        }
    }
    if max_asymmetry > asymmetry_limit {
        return Err(Error::Integrity {
            check: "second-adjoint symmetry",
            value: max_asymmetry,
            limit: asymmetry_limit,
            node: Some(worst_node),
        });
    }
    for m in w.values_mut() {
        let sym = (&*m + m.transpose()) * 0.5;
        *m = sym;
    }
    Ok(SecondAdjoint { w, max_asymmetry })
}

/// Fundamental matrix of the linearized dynamics and its inverse, each
/// solved from its own ODE, with the worst product defect recorded.
#[derive(Clone, Debug)]
pub struct Fundamental {
    pub phi: GridFunction<DMatrix<f64>>,
    pub phi_inv: GridFunction<DMatrix<f64>>,
    pub max_product_defect: f64,
}

/// Solve `dPhi/dt = J Phi` from the identity, and the inverse via its own
/// equation `dPsi/dt = -Psi J` rather than by inverting nodewise; the
/// product `Phi PhiInv` is checked against the identity at every node.
pub fn solve_fundamental(
    problem: &Problem,
    domain: &ControlDomain,
    base: &TrajectoryBundle,
    candidate: &PiecewiseControl,
    grid: &TimeGrid,
    tol_inv: f64,
) -> Result<Fundamental> {
    candidate.check_intervals(grid.intervals())?;
    let pts = resolved(domain, candidate)?;
    let x = &base.x;
    let n = problem.dim();
    let phi = integrate_stages(
        |sp: StagePoint, m: &DMatrix<f64>| {
            let xs = x.stage_value(sp);
            problem.jac(sp.t, &xs, pts[sp.interval]) * m
        },
        DMatrix::identity(n, n),
        grid,
        Direction::Forward,
    )?;
    let phi_inv = integrate_stages(
        |sp: StagePoint, m: &DMatrix<f64>| {
            let xs = x.stage_value(sp);
            -(m * problem.jac(sp.t, &xs, pts[sp.interval]))
        },
        DMatrix::identity(n, n),
        grid,
        Direction::Forward,
    )?;

    let mut max_defect = 0.0_f64;
    let mut worst_node = 0;
    let id = DMatrix::<f64>::identity(n, n);
    for k in 0..grid.num_nodes() {
        let d = (phi.value(k) * phi_inv.value(k) - &id).amax();
        if d > max_defect {
            max_defect = d;
            worst_node = k;
        }
    }
    if max_defect > tol_inv {
        return Err(Error::Integrity {
            check: "fundamental-inverse product",
            value: max_defect,
            limit: tol_inv,
            node: Some(worst_node),
        });
    }
    Ok(Fundamental {
        phi,
        phi_inv,
        max_product_defect: max_defect,
    })
}

/// Solve the first variational equation forward from zero:
/// `dX/dt = J(t, xbar, ubar) X + [f(t, xbar, u) - f(t, xbar, ubar)]`.
pub fn solve_variational(
    problem: &Problem,
    domain: &ControlDomain,
    base: &TrajectoryBundle,
    candidate: &PiecewiseControl,
    probe: &PiecewiseControl,
    grid: &TimeGrid,
) -> Result<GridFunction<DVector<f64>>> {
    candidate.check_intervals(grid.intervals())?;
    probe.check_intervals(grid.intervals())?;
    let bar = resolved(domain, candidate)?;
    let prb = resolved(domain, probe)?;
    let x = &base.x;
    integrate_stages(
        |sp: StagePoint, xv: &DVector<f64>| {
            let xs = x.stage_value(sp);
            let jac = problem.jac(sp.t, &xs, bar[sp.interval]);
            let mut d = problem.f(sp.t, &xs, prb[sp.interval]);
            d -= problem.f(sp.t, &xs, bar[sp.interval]);
            d.gemv(1.0, &jac, xv, 1.0);
            d
        },
        DVector::zeros(problem.dim()),
        grid,
        Direction::Forward,
    )
}

/// Solve the second variational equation forward from zero:
/// `dY/dt = J(ubar) Y + (J(u) - J(ubar)) X + 1/2 stack_k <f^k_xx(ubar) X, X>`,
/// with `X` supplied by `solve_variational`.
pub fn solve_second_variational(
    problem: &Problem,
    domain: &ControlDomain,
    base: &TrajectoryBundle,
    candidate: &PiecewiseControl,
    probe: &PiecewiseControl,
    x_var: &GridFunction<DVector<f64>>,
    grid: &TimeGrid,
) -> Result<GridFunction<DVector<f64>>> {
    candidate.check_intervals(grid.intervals())?;
    probe.check_intervals(grid.intervals())?;
    let bar = resolved(domain, candidate)?;
    let prb = resolved(domain, probe)?;
    let x = &base.x;
    let n = problem.dim();
    integrate_stages(
        |sp: StagePoint, yv: &DVector<f64>| {
            let xs = x.stage_value(sp);
            let xvs = x_var.stage_value(sp);
            let jac_bar = problem.jac(sp.t, &xs, bar[sp.interval]);
            let jac_prb = problem.jac(sp.t, &xs, prb[sp.interval]);
            let stack = problem.hessian_stack(sp.t, &xs, bar[sp.interval]);
            let mut d = DVector::zeros(n);
            d.gemv(1.0, &jac_bar, yv, 0.0);
            let dj = jac_prb - jac_bar;
            d.gemv(1.0, &dj, &xvs, 1.0);
            for k in 0..n {
                d[k] += 0.5 * (&stack[k + 1] * &xvs).dot(&xvs);
            }
            d
        },
        DVector::zeros(n),
        grid,
        Direction::Forward,
    )
}

/// Reconstruct the first variation through the transition matrix:
/// `X_rep(t) = Phi(t) * integral_0^t PhiInv(s) [f(s, xbar, u) - f(s, xbar, ubar)] ds`,
/// for cross-checking against `solve_variational`.
pub fn x_via_transition(
    fundamental: &Fundamental,
    problem: &Problem,
    domain: &ControlDomain,
    base: &TrajectoryBundle,
    candidate: &PiecewiseControl,
    probe: &PiecewiseControl,
    grid: &TimeGrid,
) -> Result<GridFunction<DVector<f64>>> {
    candidate.check_intervals(grid.intervals())?;
    probe.check_intervals(grid.intervals())?;
    let bar = resolved(domain, candidate)?;
    let prb = resolved(domain, probe)?;
    let x = &base.x;
    let inner = interval_cumtrap(grid, |sp| {
        let xs = x.stage_value(sp);
        let mut d = problem.f(sp.t, &xs, prb[sp.interval]);
        d -= problem.f(sp.t, &xs, bar[sp.interval]);
        fundamental.phi_inv.stage_value(sp) * d
    });
    let values: Vec<DVector<f64>> = (0..grid.num_nodes())
        .map(|k| fundamental.phi.value(k) * inner.value(k))
        .collect();
    GridFunction::from_values(*grid, values)
}

/// Everything the second-order machinery needs along one candidate: adjoint,
/// second-order adjoint, and the fundamental pair, with their self-check
/// diagnostics.
#[derive(Clone, Debug)]
pub struct AdjointBundle {
    pub psi: GridFunction<DVector<f64>>,
    pub w: GridFunction<DMatrix<f64>>,
    pub phi: GridFunction<DMatrix<f64>>,
    pub phi_inv: GridFunction<DMatrix<f64>>,
    pub w_asymmetry: f64,
    pub phi_defect: f64,
}

pub fn solve_adjoint_bundle(
    problem: &Problem,
    domain: &ControlDomain,
    base: &TrajectoryBundle,
    candidate: &PiecewiseControl,
    grid: &TimeGrid,
    tol: &IntegrityTolerances,
) -> Result<AdjointBundle> {
    let psi = solve_adjoint(problem, domain, base, candidate, grid)?;
    let second = solve_second_adjoint(
        problem,
        domain,
        base,
        candidate,
        &psi,
        grid,
        tol.w_asymmetry,
    )?;
    let fundamental = solve_fundamental(problem, domain, base, candidate, grid, tol.phi_defect)?;
    Ok(AdjointBundle {
        psi,
        w: second.w,
        phi: fundamental.phi,
        phi_inv: fundamental.phi_inv,
        w_asymmetry: second.max_asymmetry,
        phi_defect: fundamental.max_product_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::builtin_problem;
    use crate::problem::{ControlDomain, Modulus, RelaxedMixture};
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn p1_candidate_trajectory_is_zero_with_zero_cost() {
        let g = grid(200);
        let inst = builtin_problem("P1", &g).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
        for v in b.x.values() {
            assert_eq!(v[0], 0.0);
        }
        assert_eq!(b.j, 0.0);
    }

    #[test]
    fn p1_mixture_cost_matches_closed_form() {
        let g = grid(1000);
        let inst = builtin_problem("P1", &g).unwrap();
        let probe =
            PiecewiseControl::constant(inst.domain.nearest_scalar(1.0), g.intervals()).unwrap();
        let m = RelaxedMixture::new(inst.candidate.clone(), probe, 0.5).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&m).into(), &g).unwrap();
        // x(t) = alpha t, J = -alpha^2 T^3 / 3 = -1/12.
        assert_abs_diff_eq!(b.j, -1.0 / 12.0, epsilon = 1e-10);
        assert_abs_diff_eq!(b.x.value(1000)[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn p3_candidate_cost_matches_riccati_value() {
        let g = grid(1000);
        let inst = builtin_problem("P3", &g).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
        assert_abs_diff_eq!(b.j, 1.0_f64.tanh(), epsilon = 1e-4);
    }

    #[test]
    fn p1_adjoint_vanishes() {
        let g = grid(400);
        let inst = builtin_problem("P1", &g).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
        let psi = solve_adjoint(&inst.problem, &inst.domain, &b, &inst.candidate, &g).unwrap();
        for v in psi.values() {
            assert_eq!(v[0], 0.0);
        }
    }

    #[test]
    fn p3_adjoint_matches_riccati_form() {
        let g = grid(1000);
        let inst = builtin_problem("P3", &g).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
        let psi = solve_adjoint(&inst.problem, &inst.domain, &b, &inst.candidate, &g).unwrap();
        assert_abs_diff_eq!(psi.value(0)[0], -2.0 * 1.0_f64.tanh(), epsilon = 1e-4);
        for k in (0..=1000).step_by(100) {
            let t = g.node(k);
            let expect = -2.0 * (1.0 - t).tanh() * b.x.value(k)[0];
            assert_abs_diff_eq!(psi.value(k)[0], expect, epsilon = 1e-4);
        }
    }

    #[test]
    fn integrator_second_adjoints_are_linear_in_time() {
        let g = grid(500);
        for (id, sign) in [("P1", 1.0), ("P2", -1.0)] {
            let inst = builtin_problem(id, &g).unwrap();
            let b =
                solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
            let psi = solve_adjoint(&inst.problem, &inst.domain, &b, &inst.candidate, &g).unwrap();
            let w = solve_second_adjoint(
                &inst.problem,
                &inst.domain,
                &b,
                &inst.candidate,
                &psi,
                &g,
                1e-8,
            )
            .unwrap();
            assert!(w.max_asymmetry <= 1e-12);
            for k in (0..=500).step_by(50) {
                let t = g.node(k);
                assert_abs_diff_eq!(
                    w.w.value(k)[(0, 0)],
                    sign * 2.0 * (1.0 - t),
                    epsilon = 1e-12
                );
            }
        }
    }

    fn forced_scalar_problem() -> (Problem, ControlDomain) {
        // dx/dt = x + u with cost x^2: a nonzero Jacobian exercises the
        // fundamental pair.
        let p = Problem::builder("scalar-forced", 1, 1.0)
            .initial_state(DVector::from_element(1, 0.0))
            .dynamics(|_t, x, u| DVector::from_element(1, x[0] + u.as_scalar()))
            .running_cost(|_t, x, _u| x[0] * x[0])
            .jacobian(|_t, _x, _u| DMatrix::from_element(1, 1, 1.0))
            .cost_gradient(|_t, x, _u| DVector::from_element(1, 2.0 * x[0]))
            .hessians(|_t, _x, _u| {
                vec![DMatrix::from_element(1, 1, 2.0), DMatrix::zeros(1, 1)]
            })
            .lipschitz(10.0)
            .modulus(Modulus::linear(1.0))
            .build()
            .unwrap();
        let d = ControlDomain::from_scalars(&[-1.0, 0.0, 1.0]).unwrap();
        (p, d)
    }

    #[test]
    fn fundamental_matrix_matches_exponential() {
        let g = grid(100);
        let (p, d) = forced_scalar_problem();
        let c = PiecewiseControl::constant(1, g.intervals()).unwrap();
        let b = solve_state(&p, &d, (&c).into(), &g).unwrap();
        let f = solve_fundamental(&p, &d, &b, &c, &g, 1e-8).unwrap();
        assert_abs_diff_eq!(f.phi.value(100)[(0, 0)], 1.0_f64.exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(
            f.phi_inv.value(100)[(0, 0)],
            (-1.0_f64).exp(),
            epsilon = 1e-8
        );
        assert!(f.max_product_defect <= 1e-10);
    }

    #[test]
    fn p1_variational_solutions_match_closed_forms() {
        let g = grid(1000);
        let inst = builtin_problem("P1", &g).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
        let one = inst.domain.nearest_scalar(1.0);
        let probe = PiecewiseControl::constant(one, g.intervals()).unwrap();
        let x = solve_variational(&inst.problem, &inst.domain, &b, &inst.candidate, &probe, &g)
            .unwrap();
        for k in (0..=1000).step_by(125) {
            assert_abs_diff_eq!(x.value(k)[0], g.node(k), epsilon = 1e-13);
        }

        // Switch control: probe = 1 on [0, 1/2], candidate value after.
        let zero = inst.domain.nearest_scalar(0.0);
        let mut vals = vec![one; 500];
        vals.extend(vec![zero; 500]);
        let sw = PiecewiseControl::from_values(vals).unwrap();
        let xsw =
            solve_variational(&inst.problem, &inst.domain, &b, &inst.candidate, &sw, &g).unwrap();
        for k in (0..=1000).step_by(100) {
            assert_abs_diff_eq!(xsw.value(k)[0], g.node(k).min(0.5), epsilon = 1e-13);
        }

        let y = solve_second_variational(
            &inst.problem,
            &inst.domain,
            &b,
            &inst.candidate,
            &probe,
            &x,
            &g,
        )
        .unwrap();
        for v in y.values() {
            assert_eq!(v[0], 0.0);
        }
    }

    #[test]
    fn transition_representation_agrees_with_variational_solve() {
        let g = grid(1000);
        let inst = builtin_problem("P1", &g).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
        let probe =
            PiecewiseControl::constant(inst.domain.nearest_scalar(1.0), g.intervals()).unwrap();
        let f = solve_fundamental(&inst.problem, &inst.domain, &b, &inst.candidate, &g, 1e-8)
            .unwrap();
        let xr = x_via_transition(
            &f,
            &inst.problem,
            &inst.domain,
            &b,
            &inst.candidate,
            &probe,
            &g,
        )
        .unwrap();
        for k in (0..=1000).step_by(100) {
            assert_abs_diff_eq!(xr.value(k)[0], g.node(k), epsilon = 1e-12);
        }
    }

    #[test]
    fn blowup_is_reported_as_divergence() {
        let p = Problem::builder("blowup", 1, 1.0)
            .initial_state(DVector::from_element(1, 5.0))
            .dynamics(|_t, x, _u| DVector::from_element(1, x[0] * x[0]))
            .running_cost(|_t, _x, _u| 0.0)
            .jacobian(|_t, x, _u| DMatrix::from_element(1, 1, 2.0 * x[0]))
            .cost_gradient(|_t, _x, _u| DVector::zeros(1))
            .hessians(|_t, _x, _u| {
                vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 2.0)]
            })
            .lipschitz(1.0)
            .build()
            .unwrap();
        let d = ControlDomain::from_scalars(&[0.0]).unwrap();
        let g = grid(50);
        let c = PiecewiseControl::constant(0, g.intervals()).unwrap();
        let err = solve_state(&p, &d, (&c).into(), &g).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn adjoint_bundle_collects_diagnostics() {
        let g = grid(400);
        let inst = builtin_problem("P3", &g).unwrap();
        let b = solve_state(&inst.problem, &inst.domain, (&inst.candidate).into(), &g).unwrap();
        let adj = solve_adjoint_bundle(
            &inst.problem,
            &inst.domain,
            &b,
            &inst.candidate,
            &g,
            &IntegrityTolerances::default(),
        )
        .unwrap();
        assert!(adj.w_asymmetry <= 1e-10);
        assert!(adj.phi_defect <= 1e-10);
        assert_eq!(adj.phi.value(200)[(0, 0)], 1.0);
    }
}
