//! First-order checks: Hamiltonian maximization residuals over the sampled
//! control domain, the integral gap functional with its difference-quotient
//! oracle, and extraction of near-maximal (singular) control sets.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{interval_simpson, GridFunction, TimeGrid};
use crate::problem::{ControlDomain, DomainPoint, PiecewiseControl, Problem, RelaxedMixture};
use crate::trajectories::solve_state;

/// `H(t, x, u, psi) = <f(t, x, u), psi> - f0(t, x, u)`.
pub fn hamiltonian(
    problem: &Problem,
    t: f64,
    x: &DVector<f64>,
    u: &DomainPoint,
    psi: &DVector<f64>,
) -> f64 {
    problem.f(t, x, u).dot(psi) - problem.f0(t, x, u)
}

/// State gradient of the Hamiltonian: `J^T psi - grad f0`, all evaluated at
/// the same `(t, x, u)`.
pub fn hamiltonian_state_gradient(
    problem: &Problem,
    t: f64,
    x: &DVector<f64>,
    u: &DomainPoint,
    psi: &DVector<f64>,
) -> DVector<f64> {
    let mut g = problem.cost_grad(t, x, u);
    g.gemv_tr(1.0, &problem.jac(t, x, u), psi, -1.0);
    g
}

/// Outcome of scanning the maximum condition at every grid node.
#[derive(Clone, Debug, Serialize)]
pub struct PmpReport {
    pub eta: f64,
    pub max_residual: f64,
    /// Total node measure where the residual exceeds `eta`.
    pub violation_measure: f64,
    pub pass: bool,
    /// Residual series `r(t) = max_v H(v) - H(u_bar(t))`, kept out of the
    /// JSON form; export it as a CSV series instead.
    #[serde(skip)]
    pub residual: GridFunction<f64>,
}

/// Scan every domain point at every node and compare the best Hamiltonian
/// value against the candidate's. Passes when no node exceeds `eta`.
pub fn pmp_residual(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    x_bar: &GridFunction<DVector<f64>>,
    psi: &GridFunction<DVector<f64>>,
    grid: &TimeGrid,
    eta: f64,
) -> Result<PmpReport> {
    candidate.check_intervals(grid.intervals())?;
    candidate.check_domain(domain)?;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(
            "maximum-condition tolerance",
            format!("eta must be positive, got {eta}"),
        ));
    }
    let mut values = Vec::with_capacity(grid.num_nodes());
    let mut max_residual = 0.0_f64;
    let mut violation_measure = 0.0;
    for k in 0..grid.num_nodes() {
        let t = grid.node(k);
        let x = x_bar.value(k);
        let p = psi.value(k);
        let h_bar = hamiltonian(problem, t, x, domain.point(candidate.at_node(k))?, p);
        let mut h_best = f64::NEG_INFINITY;
        for i in 0..domain.len() {
            h_best = h_best.max(hamiltonian(problem, t, x, domain.point(i)?, p));
        }
        if !h_best.is_finite() {
            return Err(Error::NonFinite {
                component: "hamiltonian scan",
                t,
            });
        }
        let r = (h_best - h_bar).max(0.0);
        max_residual = max_residual.max(r);
        if r > eta {
            violation_measure += grid.node_weight(k);
        }
        values.push(r);
    }
    Ok(PmpReport {
        eta,
        max_residual,
        violation_measure,
        pass: violation_measure == 0.0,
        residual: GridFunction::from_values(*grid, values)?,
    })
}

/// First-order gap `G1(u) = int_0^T [H(u_bar(t)) - H(u(t))] dt` along the
/// candidate trajectory and adjoint.
pub fn first_order_gap(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    u: &PiecewiseControl,
    x_bar: &GridFunction<DVector<f64>>,
    psi: &GridFunction<DVector<f64>>,
    grid: &TimeGrid,
) -> Result<f64> {
    candidate.check_intervals(grid.intervals())?;
    candidate.check_domain(domain)?;
    u.check_intervals(grid.intervals())?;
    u.check_domain(domain)?;
    Ok(interval_simpson(grid, |sp| {
        let ub = domain
            .point(candidate.at_interval(sp.interval))
            .expect("validated candidate index");
        let uv = domain
            .point(u.at_interval(sp.interval))
            .expect("validated probe index");
        let x = x_bar.stage_value(sp);
        let p = psi.stage_value(sp);
        hamiltonian(problem, sp.t, &x, ub, &p) - hamiltonian(problem, sp.t, &x, uv, &p)
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub alpha: f64,
    pub value: f64,
    pub error: f64,
    /// Empirical order against the previous row, when both errors are
    /// nonzero.
    pub order: Option<f64>,
}

/// Difference-quotient check that a family of finite quotients converges to
/// an analytically computed target.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub target: f64,
    pub rows: Vec<OracleRow>,
    /// Whether the errors decrease monotonically down the alpha list.
    pub converged: bool,
}

impl OracleReport {
    pub(crate) fn assemble(target: f64, pairs: Vec<(f64, f64)>) -> Self {
        let mut rows: Vec<OracleRow> = Vec::with_capacity(pairs.len());
        for (alpha, value) in pairs {
            let error = (value - target).abs();
            let order = rows.last().and_then(|prev: &OracleRow| {
                if prev.error > 0.0 && error > 0.0 {
                    Some((prev.error / error).ln() / (prev.alpha / alpha).ln())
                } else {
                    None
                }
            });
            rows.push(OracleRow {
                alpha,
                value,
                error,
                order,
            });
        }
        let converged = rows
            .windows(2)
            .all(|w| w[1].error <= w[0].error * (1.0 + 1e-9) + 1e-15);
        OracleReport {
            target,
            rows,
            converged,
        }
    }
}

pub(crate) fn check_alpha_list(alpha_list: &[f64]) -> Result<()> {
    if alpha_list.is_empty() {
        return Err(Error::invalid("quotient sweep", "empty alpha list"));
    }
    if alpha_list.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::invalid(
            "quotient sweep",
            "every alpha must lie in (0, 1]",
        ));
    }
    if alpha_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(
            "quotient sweep",
            "alpha list must be strictly decreasing",
        ));
    }
    Ok(())
}

/// Check `(J(sigma^alpha) - J(u_bar)) / alpha -> G1(u)` down an alpha list.
pub fn first_quotient_oracle(
    problem: &Problem,
    domain: &ControlDomain,
    candidate: &PiecewiseControl,
    u: &PiecewiseControl,
    x_bar: &GridFunction<DVector<f64>>,
    psi: &GridFunction<DVector<f64>>,
    alpha_list: &[f64],
    grid: &TimeGrid,
) -> Result<OracleReport> {
    check_alpha_list(alpha_list)?;
    let target = first_order_gap(problem, domain, candidate, u, x_bar, psi, grid)?;
    let j_bar = solve_state(problem, domain, candidate.into(), grid)?.j;
    let mut pairs = Vec::with_capacity(alpha_list.len());
    for &alpha in alpha_list {
        let mixture = RelaxedMixture::new(candidate.clone(), u.clone(), alpha)?;
        let j = solve_state(problem, domain, (&mixture).into(), grid)?.j;
        pairs.push((alpha, (j - j_bar) / alpha));
    }
    Ok(OracleReport::assemble(target, pairs))
}

/// How the membership threshold for the near-maximal set is chosen.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum SingularTolerance {
    /// The same threshold at every node.
    Absolute(f64),
    /// Per node, `base * max(1, max_v |H(v)|)`, so the threshold tracks the
    /// local scale of the Hamiltonian.
    Scaled(f64),
}

impl Default for SingularTolerance {
    fn default() -> Self {
        SingularTolerance::Scaled(1e-6)
    }
}

/// Per-node list of domain points whose Hamiltonian value comes within a
/// threshold of the nodewise maximum.
#[derive(Clone, Debug, Serialize)]
pub struct SingularSet {
    pub tolerance: SingularTolerance,
    /// Resolved threshold per node.
    pub thresholds: Vec<f64>,
    /// Near-maximal domain indices per node, ascending.
    pub members: Vec<Vec<usize>>,
    /// The maximizing index per node, lowest index on ties.
    pub argmax: Vec<usize>,
}

impl SingularSet {
    pub fn contains(&self, node: usize, index: usize) -> bool {
        self.members[node].binary_search(&index).is_ok()
    }
}

/// Enumerate the near-maximal control set at every node. The argmax is
/// always a member, so the set is never empty.
pub fn singular_set(
    problem: &Problem,
    domain: &ControlDomain,
    x_bar: &GridFunction<DVector<f64>>,
    psi: &GridFunction<DVector<f64>>,
    grid: &TimeGrid,
    tolerance: SingularTolerance,
) -> Result<SingularSet> {
    match tolerance {
        SingularTolerance::Absolute(eta) | SingularTolerance::Scaled(eta) => {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::invalid(
                    "singular-set tolerance",
                    format!("threshold must be positive, got {eta}"),
                ));
            }
        }
    }
    let n = grid.num_nodes();
    let mut thresholds = Vec::with_capacity(n);
    let mut members = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    let mut h_row = vec![0.0_f64; domain.len()];
    for k in 0..n {
        let t = grid.node(k);
        let x = x_bar.value(k);
        let p = psi.value(k);
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0;
        let mut scale = 1.0_f64;
        for (i, slot) in h_row.iter_mut().enumerate() {
            let h = hamiltonian(problem, t, x, domain.point(i)?, p);
            if !h.is_finite() {
                return Err(Error::NonFinite {
                    component: "hamiltonian scan",
                    t,
                });
            }
            *slot = h;
            scale = scale.max(h.abs());
            if h > best {
                best = h;
                best_idx = i;
            }
        }
        let threshold = match tolerance {
            SingularTolerance::Absolute(eta) => eta,
            SingularTolerance::Scaled(base) => base * scale,
        };
        let row: Vec<usize> = h_row
            .iter()
            .enumerate()
            .filter(|(_, h)| **h >= best - threshold)
            .map(|(i, _)| i)
            .collect();
        thresholds.push(threshold);
        members.push(row);
        argmax.push(best_idx);
    }
    Ok(SingularSet {
        tolerance,
        thresholds,
        members,
        argmax,
    })
}

/// Classify a control against the near-maximal set: it is singular when its
/// values sit inside the set at all but a node measure of at most
/// `eta_measure`. Returns the flag and the offending measure.
pub fn is_singular(
    set: &SingularSet,
    u: &PiecewiseControl,
    grid: &TimeGrid,
    eta_measure: f64,
) -> Result<(bool, f64)> {
    u.check_intervals(grid.intervals())?;
    if set.members.len() != grid.num_nodes() {
        return Err(Error::invalid(
            "singular-set shape",
            format!(
                "set has {} nodes, grid {}",
                set.members.len(),
                grid.num_nodes()
            ),
        ));
    }
    let mut measure = 0.0;
    for k in 0..grid.num_nodes() {
        if !set.contains(k, u.at_node(k)) {
            measure += grid.node_weight(k);
        }
    }
    Ok((measure <= eta_measure, measure))
}
