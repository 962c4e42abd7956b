//! Two-point mixture relaxation tools: chattering realizations, convergence
//! measurement, difference-quotient trajectories, and the empirical fit of
//! the constants bounding those quotients by integrals of the modulus.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{GridFunction, TimeGrid};
use crate::problem::{ControlDomain, PiecewiseControl, Problem, RelaxedMixture};
use crate::trajectories::{
    solve_second_variational, solve_state, solve_variational, TrajectoryBundle,
};

/// A chattering request: realize the mixture `(1-alpha) base + alpha probe`
/// with an ordinary control that alternates on a period of `epsilon` time
/// units.
#[derive(Clone, Debug)]
pub struct ChatterSpec {
    pub alpha: f64,
    pub epsilon: f64,
    pub base: PiecewiseControl,
    pub probe: PiecewiseControl,
}

impl ChatterSpec {
    pub fn new(
        alpha: f64,
        epsilon: f64,
        base: PiecewiseControl,
        probe: PiecewiseControl,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(Error::invalid(
                "chatter weight",
                format!("alpha must lie in [0, 1], got {alpha}"),
            ));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(
                "chatter period",
                format!("epsilon must be positive, got {epsilon}"),
            ));
        }
        if base.intervals() != probe.intervals() {
            return Err(Error::invalid(
                "chatter controls",
                format!(
                    "base has {} intervals, probe {}",
                    base.intervals(),
                    probe.intervals()
                ),
            ));
        }
        Ok(ChatterSpec {
            alpha,
            epsilon,
            base,
            probe,
        })
    }
}

/// Build the chattering control: interval `k` takes the probe value when the
/// fractional part of `t_mid / epsilon` falls below `alpha`, the base value
/// otherwise, with `t_mid` the interval midpoint.
///
/// The grid must resolve the period (`h <= epsilon / 10`); sub-grid
/// chattering is rejected rather than silently degraded.
pub fn chattering(spec: &ChatterSpec, grid: &TimeGrid) -> Result<PiecewiseControl> {
    spec.base.check_intervals(grid.intervals())?;
    if spec.epsilon > grid.t_end() {
        return Err(Error::invalid(
            "chatter period",
            format!("epsilon {} exceeds the horizon {}", spec.epsilon, grid.t_end()),
        ));
    }
    if grid.step() > spec.epsilon / 10.0 {
        return Err(Error::GridTooCoarse {
            epsilon: spec.epsilon,
            h: grid.step(),
        });
    }
    let values = (0..grid.intervals())
        .map(|k| {
            let phase = (grid.midpoint(k) / spec.epsilon).fract();
            if phase < spec.alpha {
                spec.probe.at_interval(k)
            } else {
                spec.base.at_interval(k)
            }
        })
        .collect();
    PiecewiseControl::from_values(values)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    /// Sup-norm distance between the chattered and mixture trajectories.
    pub state_error: f64,
    /// Absolute cost gap between the chattered control and the mixture.
    pub cost_error: f64,
    /// Empirical order against the previous row, when both errors are
    /// nonzero.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub alpha: f64,
    pub mixture_cost: f64,
    pub rows: Vec<ConvergenceRow>,
}

/// Measure how fast chattered trajectories and costs approach the mixture as
/// the period shrinks. `eps_list` must be strictly decreasing with every
/// entry resolvable on the grid.
pub fn chattering_convergence(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    probe: &PiecewiseControl,
    alpha: f64,
    eps_list: &[f64],
    grid: &TimeGrid,
) -> Result<ConvergenceReport> {
    if eps_list.is_empty() {
        return Err(Error::invalid("chatter sweep", "empty epsilon list"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(
            "chatter sweep",
            "epsilon list must be strictly decreasing",
        ));
    }
    let mixture = RelaxedMixture::new(candidate.clone(), probe.clone(), alpha)?;
    let mix = solve_state(problem, domain, (&mixture).into(), grid)?;

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let spec = ChatterSpec::new(alpha, eps, candidate.clone(), probe.clone())?;
        let chat = chattering(&spec, grid)?;
        let traj = solve_state(problem, domain, (&chat).into(), grid)?;
        let state_error = traj.x.sup_distance(&mix.x);
        let cost_error = (traj.j - mix.j).abs();
        let order = rows.last().and_then(|prev: &ConvergenceRow| {
            if prev.state_error > 0.0 && state_error > 0.0 {
                Some((prev.state_error / state_error).ln() / (prev.epsilon / eps).ln())
            } else {
                None
            }
        });
        rows.push(ConvergenceRow {
            epsilon: eps,
            state_error,
            cost_error,
            order,
        });
    }
    Ok(ConvergenceReport {
        alpha,
        mixture_cost: mix.j,
        rows,
    })
}

/// The modulus applied to the control distance at every node:
/// `theta(t) = omega(rho(u(t), ubar(t)))`, right-continuous like the
/// controls themselves.
#[derive(Clone, Debug)]
pub struct ThetaSeries {
    pub theta: GridFunction<f64>,
}

pub fn theta_series(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    u: &PiecewiseControl,
    grid: &TimeGrid,
) -> Result<ThetaSeries> {
    candidate.check_intervals(grid.intervals())?;
    u.check_intervals(grid.intervals())?;
    let mut values = Vec::with_capacity(grid.num_nodes());
    for k in 0..grid.num_nodes() {
        let rho = domain.distance(u.at_node(k), candidate.at_node(k))?;
        values.push(problem.modulus().eval(rho));
    }
    Ok(ThetaSeries {
        theta: GridFunction::from_values(*grid, values)?,
    })
}

fn check_quotient_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(
            "difference quotient",
            format!("alpha must lie in (0, 1], got {alpha}; the alpha = 0 limit is the variational solution"),
        ));
    }
    Ok(())
}

/// First difference quotient of the state in the mixture weight:
/// `(x^alpha - xbar) / alpha` nodewise, with `x^alpha` the mixture
/// trajectory. Converges to the first variational solution as `alpha` drops.
pub fn difference_quotient_x(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    probe: &PiecewiseControl,
    alpha: f64,
    grid: &TimeGrid,
) -> Result<GridFunction<DVector<f64>>> {
    check_quotient_alpha(alpha)?;
    let base = solve_state(problem, domain, candidate.into(), grid)?;
    let mixture = RelaxedMixture::new(candidate.clone(), probe.clone(), alpha)?;
    let mix = solve_state(problem, domain, (&mixture).into(), grid)?;
    let values: Vec<DVector<f64>> = mix
        .x
        .values()
        .iter()
        .zip(base.x.values())
        .map(|(xa, xb)| (xa - xb) / alpha)
        .collect();
    GridFunction::from_values(*grid, values)
}

/// Second difference quotient: `(X^alpha - X) / alpha`, with `X` the first
/// variational solution (the `alpha -> 0` limit of `X^alpha`). Converges to
/// the second variational solution.
pub fn difference_quotient_y(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    probe: &PiecewiseControl,
    alpha: f64,
    x_var: &GridFunction<DVector<f64>>,
    grid: &TimeGrid,
) -> Result<GridFunction<DVector<f64>>> {
    check_quotient_alpha(alpha)?;
    let xa = difference_quotient_x(problem, domain, candidate, probe, alpha, grid)?;
    let values: Vec<DVector<f64>> = xa
        .values()
        .iter()
        .zip(x_var.values())
        .map(|(q, x)| (q - x) / alpha)
        .collect();
    GridFunction::from_values(*grid, values)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub alpha: f64,
    /// Smallest constant with `|X^alpha(t)| <= c1 * int_0^t theta`.
    pub c1: f64,
    /// Smallest constant with `|Y^alpha(t)| <= c2 * int_0^t theta^2`.
    pub c2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub c1_max: f64,
    pub c2_max: f64,
    /// Max/min ratio over the nonzero fitted constants; 1 when all are zero.
    pub c1_spread: f64,
    pub c2_spread: f64,
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for v in values.filter(|v| *v > 0.0) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == 0.0 {
        1.0
    } else {
        hi / lo
    }
}

/// Fit, per mixture weight, the smallest constants bounding the difference
/// quotients by cumulative modulus integrals, and summarize how uniform
/// those constants are across weights.
///
/// `alpha = 0` rows use the variational solutions (the quotient limits). A
/// node where the modulus integral vanishes while the quotient does not
/// means the declared modulus cannot see a control difference the dynamics
/// react to, and is reported as an inconsistency.
pub fn fit_quotient_bounds(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    probe: &PiecewiseControl,
    alpha_list: &[f64],
    grid: &TimeGrid,
) -> Result<BoundReport> {
    candidate.check_intervals(grid.intervals())?;
    probe.check_intervals(grid.intervals())?;
    let h = grid.step();
    let mut cum_theta = Vec::with_capacity(grid.num_nodes());
    let mut cum_theta_sq = Vec::with_capacity(grid.num_nodes());
    let mut acc1 = 0.0;
    let mut acc2 = 0.0;
    cum_theta.push(0.0);
    cum_theta_sq.push(0.0);
    for k in 0..grid.intervals() {
        let rho = domain.distance(probe.at_interval(k), candidate.at_interval(k))?;
        let th = problem.modulus().eval(rho);
        acc1 += h * th;
        acc2 += h * th * th;
        cum_theta.push(acc1);
        cum_theta_sq.push(acc2);
    }

    let base = solve_state(problem, domain, candidate.into(), grid)?;
    let x_var = solve_variational(problem, domain, &base, candidate, probe, grid)?;
    let y_var =
        solve_second_variational(problem, domain, &base, candidate, probe, &x_var, grid)?;

    // Magnitudes at integrator-roundoff scale are treated as zero; a
    // quotient that vanishes in exact arithmetic must fit c = 0 rather than
    // a ratio of noise terms.
    let fit_one = |series: &GridFunction<DVector<f64>>, cums: &[f64]| -> Result<f64> {
        let mut c = 0.0_f64;
        for k in 0..grid.num_nodes() {
            let mag = series.value(k).amax();
            if cums[k] <= 1e-14 {
                if mag > 1e-10 {
                    return Err(Error::Inconsistent(format!(
                        "quotient magnitude {mag:.3e} at node {k} with zero modulus integral; \
                         the declared modulus does not dominate the control increment"
                    )));
                }
            } else if mag > 1e-12 {
                c = c.max(mag / cums[k]);
            }
        }
        Ok(c)
    };

    let mut alphas: Vec<f64> = Vec::with_capacity(alpha_list.len() + 1);
    alphas.push(0.0);
    for &a in alpha_list {
        if a > 0.0 {
            alphas.push(a);
        }
    }

    let mut rows = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        let (xq, yq) = if a == 0.0 {
            (x_var.clone(), y_var.clone())
        } else {
            let xq = difference_quotient_x(problem, domain, candidate, probe, a, grid)?;
            let yq = difference_quotient_y(problem, domain, candidate, probe, a, &x_var, grid)?;
            (xq, yq)
        };
        rows.push(BoundRow {
            alpha: a,
            c1: fit_one(&xq, &cum_theta)?,
            c2: fit_one(&yq, &cum_theta_sq)?,
        });
    }

    let c1_max = rows.iter().map(|r| r.c1).fold(0.0, f64::max);
    let c2_max = rows.iter().map(|r| r.c2).fold(0.0, f64::max);
    let c1_spread = spread(rows.iter().map(|r| r.c1));
    let c2_spread = spread(rows.iter().map(|r| r.c2));
    Ok(BoundReport {
        rows,
        c1_max,
        c2_max,
        c1_spread,
        c2_spread,
    })
}

/// Convenience wrapper exposing the trajectory of a chattered control, for
/// callers comparing it against the mixture directly.
pub fn chattered_trajectory(
    problem: &Problem,
    domain: &ControlDomain,
    spec: &ChatterSpec,
    grid: &TimeGrid,
) -> Result<(PiecewiseControl, TrajectoryBundle)> {
    let control = chattering(spec, grid)?;
    let traj = solve_state(problem, domain, (&control).into(), grid)?;
    Ok((control, traj))
}
