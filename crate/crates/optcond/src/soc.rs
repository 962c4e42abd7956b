//! Second-order machinery: the kernel pair behind the double-integral
//! functional `Q`, the necessary condition `Q <= 0` with its pointwise
//! counterpart, the trace-identity cross-check, the second
//! difference-quotient oracle, and the sufficient-condition fit with its
//! quadratic-growth verification.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{interval_cumtrap, interval_simpson, GridFunction, StagePoint, TimeGrid};
use crate::pmp::{hamiltonian_state_gradient, OracleReport, SingularSet};
use crate::problem::{ControlDomain, PiecewiseControl, Problem, RelaxedMixture};
use crate::trajectories::{AdjointBundle, TrajectoryBundle};

/// Solved candidate data bundled for kernel evaluation: trajectory, adjoint,
/// second-order adjoint, and the fundamental pair, all on one grid.
pub struct SocKernelContext<'a> {
    problem: &'a Problem,
    domain: &'a ControlDomain,
    candidate: &'a PiecewiseControl,
    base: &'a TrajectoryBundle,
    adjoints: &'a AdjointBundle,
    grid: TimeGrid,
}

impl<'a> SocKernelContext<'a> {
    pub fn new(
        problem: &'a Problem,
        domain: &'a ControlDomain,
        candidate: &'a PiecewiseControl,
        base: &'a TrajectoryBundle,
        adjoints: &'a AdjointBundle,
        grid: &TimeGrid,
    ) -> Result<Self> {
        candidate.check_intervals(grid.intervals())?;
        candidate.check_domain(domain)?;
        let n = grid.num_nodes();
        let shapes = [
            ("trajectory", base.x.values().len()),
            ("adjoint", adjoints.psi.values().len()),
            ("second-order adjoint", adjoints.w.values().len()),
            ("fundamental solution", adjoints.phi.values().len()),
            ("fundamental inverse", adjoints.phi_inv.values().len()),
        ];
        for (what, len) in shapes {
            if len != n {
                return Err(Error::invalid(
                    "kernel context",
                    format!("{what} has {len} nodes, grid has {n}"),
                ));
            }
        }
        Ok(SocKernelContext {
            problem,
            domain,
            candidate,
            base,
            adjoints,
            grid: *grid,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn domain(&self) -> &ControlDomain {
        self.domain
    }

    pub fn candidate(&self) -> &PiecewiseControl {
        self.candidate
    }

    pub fn base(&self) -> &TrajectoryBundle {
        self.base
    }

    pub fn adjoints(&self) -> &AdjointBundle {
        self.adjoints
    }

    /// `W(f(u_bar) - f(v)) + H_x(u_bar) - H_x(v)` at a stage, before the
    /// transition factor.
    fn raw_f(&self, sp: StagePoint, v_index: usize) -> Result<DVector<f64>> {
        let x = self.base.x.stage_value(sp);
        let psi = self.adjoints.psi.stage_value(sp);
        let w = self.adjoints.w.stage_value(sp);
        let ub = self.domain.point(self.candidate.at_interval(sp.interval))?;
        let uv = self.domain.point(v_index)?;
        let df = self.problem.f(sp.t, &x, ub) - self.problem.f(sp.t, &x, uv);
        let mut out = hamiltonian_state_gradient(self.problem, sp.t, &x, ub, &psi)
            - hamiltonian_state_gradient(self.problem, sp.t, &x, uv, &psi);
        out.gemv(1.0, &w, &df, 1.0);
        Ok(out)
    }

    fn stage_f(&self, sp: StagePoint, v_index: usize) -> Result<DVector<f64>> {
        let raw = self.raw_f(sp, v_index)?;
        Ok(self.adjoints.phi.stage_value(sp).tr_mul(&raw))
    }

    fn stage_g(&self, sp: StagePoint, v_index: usize) -> Result<DVector<f64>> {
        let x = self.base.x.stage_value(sp);
        let ub = self.domain.point(self.candidate.at_interval(sp.interval))?;
        let uv = self.domain.point(v_index)?;
        let df = self.problem.f(sp.t, &x, uv) - self.problem.f(sp.t, &x, ub);
        Ok(&self.adjoints.phi_inv.stage_value(sp) * df)
    }

    /// Modulus of the control distance per interval,
    /// `omega(rho(u_k, u_bar_k))`.
    fn modulus_by_interval(&self, u: &PiecewiseControl) -> Result<Vec<f64>> {
        u.check_intervals(self.grid.intervals())?;
        (0..self.grid.intervals())
            .map(|k| {
                let rho = self
                    .domain
                    .distance(u.at_interval(k), self.candidate.at_interval(k))?;
                Ok(self.problem.modulus().eval(rho))
            })
            .collect()
    }
}

/// Left kernel at a node: `Phi(t)^T [W(t)(f(u_bar) - f(v)) + H_x(u_bar) -
/// H_x(v)]`, everything along the candidate trajectory.
pub fn kernel_f(ctx: &SocKernelContext, node: usize, v_index: usize) -> Result<DVector<f64>> {
    ctx.stage_f(StagePoint::node(&ctx.grid, node), v_index)
}

/// Right kernel at a node: `Phi(s)^{-1} (f(v) - f(u_bar))`.
pub fn kernel_g(ctx: &SocKernelContext, node: usize, v_index: usize) -> Result<DVector<f64>> {
    ctx.stage_g(StagePoint::node(&ctx.grid, node), v_index)
}

/// The double-integral functional, oriented so optimality demands
/// `Q(u) <= 0`. The kernel pairing integrates to the negative of that
/// orientation, hence the sign flip on the way out; the second
/// difference-quotient oracle (`q2 -> -Q`) pins this convention.
pub fn necessary_q(ctx: &SocKernelContext, u: &PiecewiseControl) -> Result<f64> {
    u.check_intervals(ctx.grid.intervals())?;
    u.check_domain(ctx.domain)?;
    let dim = ctx.problem.dim();
    let mut failure = None;
    let cumulative = interval_cumtrap(&ctx.grid, |sp| {
        match ctx.stage_g(sp, u.at_interval(sp.interval)) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                DVector::zeros(dim)
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut failure = None;
    let inner = interval_simpson(&ctx.grid, |sp| {
        match ctx.stage_f(sp, u.at_interval(sp.interval)) {
            Ok(f) => f.dot(&cumulative.stage_value(sp)),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if !inner.is_finite() {
        return Err(Error::KernelNonFinite {
            t_node: 0,
            s_node: 0,
        });
    }
    Ok(-inner)
}

/// `Q` against its violation threshold `eta * (1 + |Q|)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QOutcome {
    pub q: f64,
    pub threshold: f64,
    pub violated: bool,
}

impl QOutcome {
    pub fn evaluate(q: f64, eta: f64) -> Self {
        let threshold = eta * (1.0 + q.abs());
        QOutcome {
            q,
            threshold,
            violated: q > threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointwiseViolation {
    pub node: usize,
    pub t: f64,
    pub domain_index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointwiseReport {
    pub eta: f64,
    pub violations: Vec<PointwiseViolation>,
    /// Node measure of the nodes carrying at least one violation.
    pub violation_measure: f64,
    pub pass: bool,
}

/// Pointwise second-order test over the near-maximal set: at every node and
/// every member `v` there,
/// `D(t, v) = <W(f(u_bar) - f(v)) + H_x(u_bar) - H_x(v), f(u_bar) - f(v)>`
/// must stay below `eta`.
pub fn pointwise_test(
    ctx: &SocKernelContext,
    set: &SingularSet,
    eta: f64,
) -> Result<PointwiseReport> {
    if set.members.len() != ctx.grid.num_nodes() {
        return Err(Error::invalid(
            "pointwise test",
            format!(
                "singular set has {} nodes, grid has {}",
                set.members.len(),
                ctx.grid.num_nodes()
            ),
        ));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(
            "pointwise tolerance",
            format!("eta must be positive, got {eta}"),
        ));
    }
    let mut violations = Vec::new();
    let mut violation_measure = 0.0;
    for node in 0..ctx.grid.num_nodes() {
        let sp = StagePoint::node(&ctx.grid, node);
        let x = ctx.base.x.value(node);
        let ub = ctx.domain.point(ctx.candidate.at_node(node))?;
        let f_bar = ctx.problem.f(sp.t, x, ub);
        let mut node_violated = false;
        for &v in &set.members[node] {
            let df = &f_bar - ctx.problem.f(sp.t, x, ctx.domain.point(v)?);
            let a = ctx.raw_f(sp, v)?;
            let d = a.dot(&df);
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    component: "pointwise kernel",
                    t: sp.t,
                });
            }
            if d > eta {
                node_violated = true;
                violations.push(PointwiseViolation {
                    node,
                    t: sp.t,
                    domain_index: v,
                    value: d,
                });
            }
        }
        if node_violated {
            violation_measure += ctx.grid.node_weight(node);
        }
    }
    Ok(PointwiseReport {
        eta,
        violations,
        violation_measure,
        pass: violation_measure == 0.0,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceIdentity {
    /// `-1/2 int <H_xx X, X> dt`.
    pub lhs: f64,
    /// `int <W (f(u_bar) - f(u)), X> dt`.
    pub rhs: f64,
    pub relative_gap: f64,
}

/// Cross-check the two independent routes to the second-order cost term.
/// A gap beyond `limit` means a sign or transpose fault somewhere in the
/// kernel assembly and escalates to an integrity error.
pub fn trace_identity_check(
    ctx: &SocKernelContext,
    u: &PiecewiseControl,
    x_var: &GridFunction<DVector<f64>>,
    limit: f64,
) -> Result<TraceIdentity> {
    u.check_intervals(ctx.grid.intervals())?;
    u.check_domain(ctx.domain)?;
    let mut failure = None;
    let lhs = interval_simpson(&ctx.grid, |sp| {
        let x = ctx.base.x.stage_value(sp);
        let xv = x_var.stage_value(sp);
        let psi = ctx.adjoints.psi.stage_value(sp);
        let ub = match ctx.domain.point(ctx.candidate.at_interval(sp.interval)) {
            Ok(p) => p,
            Err(e) => {
                failure.get_or_insert(e);
                return 0.0;
            }
        };
        let hxx = crate::trajectories::hamiltonian_hessian(ctx.problem, sp.t, &x, ub, &psi);
        -0.5 * (&hxx * &xv).dot(&xv)
    });
    let rhs = interval_simpson(&ctx.grid, |sp| {
        let x = ctx.base.x.stage_value(sp);
        let xv = x_var.stage_value(sp);
        let w = ctx.adjoints.w.stage_value(sp);
        let ub = match ctx.domain.point(ctx.candidate.at_interval(sp.interval)) {
            Ok(p) => p,
            Err(e) => {
                failure.get_or_insert(e);
                return 0.0;
            }
        };
        let uv = match ctx.domain.point(u.at_interval(sp.interval)) {
            Ok(p) => p,
            Err(e) => {
                failure.get_or_insert(e);
                return 0.0;
            }
        };
        let df = ctx.problem.f(sp.t, &x, ub) - ctx.problem.f(sp.t, &x, uv);
        (&w * &df).dot(&xv)
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let scale = lhs.abs().max(rhs.abs());
    let relative_gap = if scale < 1e-14 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    };
    if relative_gap > limit {
        return Err(Error::Integrity {
            check: "trace identity",
            value: relative_gap,
            limit,
            node: None,
        });
    }
    Ok(TraceIdentity {
        lhs,
        rhs,
        relative_gap,
    })
}

/// Check `(J(sigma^alpha) - J(u_bar)) / alpha^2 -> -Q(u)` down an alpha
/// list. Meaningful when `u` is singular, so the first-order term carries no
/// `1/alpha` residue.
pub fn second_quotient_oracle(
    ctx: &SocKernelContext,
    u: &PiecewiseControl,
    alpha_list: &[f64],
) -> Result<OracleReport> {
    crate::pmp::check_alpha_list(alpha_list)?;
    let target = -necessary_q(ctx, u)?;
    let mut pairs = Vec::with_capacity(alpha_list.len());
    for &alpha in alpha_list {
        let mixture = RelaxedMixture::new(ctx.candidate.clone(), u.clone(), alpha)?;
        let j = crate::trajectories::solve_state(
            ctx.problem,
            ctx.domain,
            (&mixture).into(),
            &ctx.grid,
        )?
        .j;
        pairs.push((alpha, (j - ctx.base.j) / (alpha * alpha)));
    }
    Ok(OracleReport::assemble(target, pairs))
}

#[derive(Clone, Debug, Serialize)]
pub struct FitRow {
    pub member_index: usize,
    pub q: f64,
    /// `R(u) = int [omega(rho(u, u_bar))]^2 dt`.
    pub r: f64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FitOutcome {
    /// Every family member with `R > 0` satisfied `-Q/R >= beta_hat > 0`.
    Established { beta_hat: f64, binding_member: usize },
    /// Some member pushed the fitted coefficient to zero or below.
    Violation { member_index: usize, q: f64, r: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub rows: Vec<FitRow>,
    pub outcome: FitOutcome,
}

impl FitReport {
    pub fn beta_hat(&self) -> Option<f64> {
        match self.outcome {
            FitOutcome::Established { beta_hat, .. } => Some(beta_hat),
            FitOutcome::Violation { .. } => None,
        }
    }
}

/// Fit the largest coercivity coefficient consistent with the family:
/// `beta_hat = min over members with R > 0 of (-Q/R)`. A nonpositive fit
/// names the violating member instead.
pub fn sufficient_fit(ctx: &SocKernelContext, family: &[PiecewiseControl]) -> Result<FitReport> {
    if family.is_empty() {
        return Err(Error::invalid("coercivity fit", "empty control family"));
    }
    let h = ctx.grid.step();
    let mut rows = Vec::with_capacity(family.len());
    let mut best: Option<(f64, usize)> = None;
    for (member_index, u) in family.iter().enumerate() {
        let theta = ctx.modulus_by_interval(u)?;
        let r: f64 = h * theta.iter().map(|th| th * th).sum::<f64>();
        let q = necessary_q(ctx, u)?;
        if r > 0.0 {
            let ratio = -q / r;
            if best.map_or(true, |(b, _)| ratio < b) {
                best = Some((ratio, member_index));
            }
        }
        rows.push(FitRow { member_index, q, r });
    }
    let (beta_hat, binding_member) = best.ok_or(Error::DegenerateFamily)?;
    let outcome = if beta_hat > 0.0 {
        FitOutcome::Established {
            beta_hat,
            binding_member,
        }
    } else {
        let row = &rows[binding_member];
        FitOutcome::Violation {
            member_index: binding_member,
            q: row.q,
            r: row.r,
        }
    };
    Ok(FitReport { rows, outcome })
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthFailure {
    pub member_index: usize,
    pub cost_gap: f64,
    pub required: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub beta_hat: f64,
    pub eps0: f64,
    pub tolerance: f64,
    /// Members inside the modulus neighborhood `int omega(rho) dt <= eps0`.
    pub neighborhood_members: Vec<usize>,
    pub failures: Vec<GrowthFailure>,
    pub pass: bool,
}

/// Verify the quadratic growth the fitted coefficient promises: every family
/// member inside the modulus neighborhood must satisfy
/// `J(u) - J(u_bar) >= (beta_hat / 2) R(u) - tolerance`.
pub fn growth_check(
    ctx: &SocKernelContext,
    family: &[PiecewiseControl],
    beta_hat: f64,
    eps0: f64,
    tolerance: f64,
) -> Result<GrowthReport> {
    if !(beta_hat.is_finite() && beta_hat > 0.0) {
        return Err(Error::invalid(
            "growth check",
            format!("beta_hat must be positive, got {beta_hat}"),
        ));
    }
    if !(eps0.is_finite() && eps0 > 0.0) {
        return Err(Error::invalid(
            "growth check",
            format!("eps0 must be positive, got {eps0}"),
        ));
    }
    let h = ctx.grid.step();
    let mut neighborhood_members = Vec::new();
    let mut failures = Vec::new();
    for (member_index, u) in family.iter().enumerate() {
        let theta = ctx.modulus_by_interval(u)?;
        let radius: f64 = h * theta.iter().sum::<f64>();
        if radius > eps0 {
            continue;
        }
        neighborhood_members.push(member_index);
        let r: f64 = h * theta.iter().map(|th| th * th).sum::<f64>();
        let j = crate::trajectories::solve_state(ctx.problem, ctx.domain, u.into(), &ctx.grid)?.j;
        let cost_gap = j - ctx.base.j;
        let required = 0.5 * beta_hat * r;
        if cost_gap < required - tolerance {
            failures.push(GrowthFailure {
                member_index,
                cost_gap,
                required,
            });
        }
    }
    let pass = failures.is_empty();
    Ok(GrowthReport {
        beta_hat,
        eps0,
        tolerance,
        neighborhood_members,
        failures,
        pass,
    })
}

/// Aggregated second-order verdict for one run, as written to disk.
#[derive(Clone, Debug, Serialize)]
pub struct SocReport {
    pub eta: f64,
    /// Worst (largest) `Q` over the singular family members; absent when the
    /// family has none.
    pub worst_q: Option<f64>,
    pub worst_member: Option<usize>,
    pub singular_members: Vec<usize>,
    pub q_violated: bool,
    pub pointwise: PointwiseReport,
    pub beta_hat: Option<f64>,
    pub growth_failures: Vec<GrowthFailure>,
}
