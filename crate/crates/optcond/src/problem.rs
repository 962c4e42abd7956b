//! Problem statements and control-domain data.
//!
//! A control domain here is a finite metric sample: a list of opaque points
//! together with a full pairwise distance table. No linear structure on the
//! points is ever assumed; everything downstream consumes them only through
//! the problem's own dynamics and cost closures and through the metric.
//!
//! Controls are piecewise constant on the grid intervals and stored as point
//! indices. A control is right-continuous as a function of time: node `t_k`
//! carries interval `k`'s value, and the final node carries the last
//! interval's value.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// One admissible control value. The payload is opaque to the library: only
/// the owning problem's closures interpret it. Scalar payloads cover the
/// built-in problems; richer spaces encode whatever coordinates their
/// dynamics need.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPoint(Vec<f64>);

impl DomainPoint {
    pub fn new(payload: Vec<f64>) -> Self {
        DomainPoint(payload)
    }

    pub fn scalar(v: f64) -> Self {
        DomainPoint(vec![v])
    }

    pub fn payload(&self) -> &[f64] {
        &self.0
    }

    /// First payload coordinate; the convention used by scalar domains.
    pub fn as_scalar(&self) -> f64 {
        self.0[0]
    }
}

/// How thoroughly `ControlDomain::new` scans the triangle inequality.
const FULL_TRIANGLE_SCAN_LIMIT: usize = 64;
const SAMPLED_TRIANGLE_TRIPLES: usize = 100_000;

/// Finite sampled metric space of control values.
#[derive(Clone, Debug)]
pub struct ControlDomain {
    points: Vec<DomainPoint>,
    labels: Vec<String>,
    dist: Vec<f64>,
}

impl PartialEq for ControlDomain {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.dist == other.dist
    }
}

impl ControlDomain {
    /// Build a domain from points and a metric, validating the metric axioms.
    /// Symmetry, nonnegativity and the zero diagonal are checked on every
    /// pair; the triangle inequality on every triple for small domains and on
    /// a fixed-seed sample of triples for large ones (`validate_metric_full`
    /// is available when the full scan is wanted regardless of size).
    pub fn new(
        points: Vec<DomainPoint>,
        labels: Vec<String>,
        metric: impl Fn(&DomainPoint, &DomainPoint) -> f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("control domain", "no points"));
        }
        if labels.len() != points.len() {
            return Err(Error::invalid(
                "control domain",
                format!("{} labels for {} points", labels.len(), points.len()),
            ));
        }
        let m = points.len();
        let mut dist = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                dist[i * m + j] = metric(&points[i], &points[j]);
            }
        }
        let domain = ControlDomain {
            points,
            labels,
            dist,
        };
        domain.validate_pairs()?;
        if m <= FULL_TRIANGLE_SCAN_LIMIT {
            domain.validate_metric_full()?;
        } else {
            domain.validate_triangle_sampled(SAMPLED_TRIANGLE_TRIPLES)?;
        }
        Ok(domain)
    }

    /// Scalar domain from an explicit value list, with the absolute-difference
    /// metric.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let points: Vec<DomainPoint> = values.iter().map(|&v| DomainPoint::scalar(v)).collect();
        let labels = values.iter().map(|v| format!("u={v}")).collect();
        ControlDomain::new(points, labels, |a, b| (a.as_scalar() - b.as_scalar()).abs())
    }

    /// Uniformly sampled scalar interval `[lo, hi]` with `m` points and the
    /// absolute-difference metric.
    pub fn sampled_interval(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m < 2 || !(hi > lo) {
            return Err(Error::invalid(
                "control domain",
                format!("need hi > lo and at least two samples, got [{lo}, {hi}] with {m}"),
            ));
        }
        let step = (hi - lo) / (m - 1) as f64;
        let values: Vec<f64> = (0..m)
            .map(|i| if i == m - 1 { hi } else { lo + i as f64 * step })
            .collect();
        Self::from_scalars(&values)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Result<&DomainPoint> {
        self.points.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.points.len(),
        })
    }

    pub fn label(&self, i: usize) -> Result<&str> {
        self.labels
            .get(i)
            .map(String::as_str)
            .ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.points.len(),
            })
    }

    /// Metric value between two indexed points.
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        let m = self.points.len();
        if i >= m {
            return Err(Error::IndexOutOfRange { index: i, len: m });
        }
        if j >= m {
            return Err(Error::IndexOutOfRange { index: j, len: m });
        }
        Ok(self.dist[i * m + j])
    }

    /// Index of the point whose scalar payload is nearest to `v`; ties go to
    /// the lowest index.
    pub fn nearest_scalar(&self, v: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p.as_scalar() - v).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn validate_pairs(&self) -> Result<()> {
        let m = self.points.len();
        for i in 0..m {
            for j in 0..m {
                let d = self.dist[i * m + j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::invalid(
                        "control domain",
                        format!("distance({i}, {j}) = {d} is not a finite nonnegative value"),
                    ));
                }
                if (d - self.dist[j * m + i]).abs() > 0.0 {
                    return Err(Error::invalid(
                        "control domain",
                        format!("distance({i}, {j}) is not symmetric"),
                    ));
                }
            }
            if self.dist[i * m + i] != 0.0 {
                return Err(Error::invalid(
                    "control domain",
                    format!("distance({i}, {i}) must be zero"),
                ));
            }
        }
        Ok(())
    }

    /// Triangle inequality over every index triple. Quadratic pair checks run
    /// in `new`; this cubic scan is also run there for small domains and is
    /// exposed for tests on large ones.
    pub fn validate_metric_full(&self) -> Result<()> {
        let m = self.points.len();
        let tol = 1e-12;
        for i in 0..m {
            for k in 0..m {
                let dik = self.dist[i * m + k];
                for j in 0..m {
                    if self.dist[i * m + j] > dik + self.dist[k * m + j] + tol {
                        return Err(Error::invalid(
                            "control domain",
                            format!("triangle inequality fails on triple ({i}, {k}, {j})"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_triangle_sampled(&self, triples: usize) -> Result<()> {
        let m = self.points.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7269_616e_676c_65);
        let tol = 1e-12;
        for _ in 0..triples {
            let i = rng.gen_range(0..m);
            let j = rng.gen_range(0..m);
            let k = rng.gen_range(0..m);
            if self.dist[i * m + j] > self.dist[i * m + k] + self.dist[k * m + j] + tol {
                return Err(Error::invalid(
                    "control domain",
                    format!("triangle inequality fails on triple ({i}, {k}, {j})"),
                ));
            }
        }
        Ok(())
    }
}

/// Modulus of continuity bounding how strongly the problem data react to a
/// control move of a given metric size.
#[derive(Clone)]
pub enum Modulus {
    /// `r -> coeff * r`.
    Linear(f64),
    Custom {
        description: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Modulus {
    pub fn linear(coeff: f64) -> Self {
        Modulus::Linear(coeff)
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Modulus::Linear(c) => c * r,
            Modulus::Custom { f, .. } => f(r),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Modulus::Linear(c) => format!("linear, omega(r) = {c} * r"),
            Modulus::Custom { description, .. } => description.clone(),
        }
    }
}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Modulus({})", self.describe())
    }
}

type DynamicsFn = Arc<dyn Fn(f64, &DVector<f64>, &DomainPoint) -> DVector<f64> + Send + Sync>;
type CostFn = Arc<dyn Fn(f64, &DVector<f64>, &DomainPoint) -> f64 + Send + Sync>;
type JacobianFn = Arc<dyn Fn(f64, &DVector<f64>, &DomainPoint) -> DMatrix<f64> + Send + Sync>;
type GradientFn = Arc<dyn Fn(f64, &DVector<f64>, &DomainPoint) -> DVector<f64> + Send + Sync>;
type HessiansFn = Arc<dyn Fn(f64, &DVector<f64>, &DomainPoint) -> Vec<DMatrix<f64>> + Send + Sync>;

/// An optimal control problem on `[0, horizon]`: state dynamics, running
/// cost, their state derivatives, and the regularity data (Lipschitz constant
/// and modulus) the estimates rely on.
///
/// Derivative conventions: `jacobian` is the plain Jacobian of the dynamics
/// (`jac[(i, j)] = d f_i / d x_j`), `cost_gradient` the column gradient of
/// the running cost, and `hessians` the list of state Hessians with the cost
/// Hessian first, then one per dynamics component.
#[derive(Clone)]
pub struct Problem {
    name: String,
    dim: usize,
    horizon: f64,
    x0: DVector<f64>,
    dynamics: DynamicsFn,
    running_cost: CostFn,
    jacobian: JacobianFn,
    cost_gradient: GradientFn,
    hessians: HessiansFn,
    lipschitz: f64,
    modulus: Modulus,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("lipschitz", &self.lipschitz)
            .field("modulus", &self.modulus)
            .finish_non_exhaustive()
    }
}

pub struct ProblemBuilder {
    name: String,
    dim: usize,
    horizon: f64,
    x0: Option<DVector<f64>>,
    dynamics: Option<DynamicsFn>,
    running_cost: Option<CostFn>,
    jacobian: Option<JacobianFn>,
    cost_gradient: Option<GradientFn>,
    hessians: Option<HessiansFn>,
    lipschitz: Option<f64>,
    modulus: Option<Modulus>,
}

impl ProblemBuilder {
    pub fn initial_state(mut self, x0: DVector<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn dynamics(
        mut self,
        f: impl Fn(f64, &DVector<f64>, &DomainPoint) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dynamics = Some(Arc::new(f));
        self
    }

    pub fn running_cost(
        mut self,
        f: impl Fn(f64, &DVector<f64>, &DomainPoint) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running_cost = Some(Arc::new(f));
        self
    }

    pub fn jacobian(
        mut self,
        f: impl Fn(f64, &DVector<f64>, &DomainPoint) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(f));
        self
    }

    pub fn cost_gradient(
        mut self,
        f: impl Fn(f64, &DVector<f64>, &DomainPoint) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.cost_gradient = Some(Arc::new(f));
        self
    }

    pub fn hessians(
        mut self,
        f: impl Fn(f64, &DVector<f64>, &DomainPoint) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.hessians = Some(Arc::new(f));
        self
    }

    pub fn lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn modulus(mut self, m: Modulus) -> Self {
        self.modulus = Some(m);
        self
    }

    pub fn build(self) -> Result<Problem> {
        let missing = |what: &'static str| Error::invalid("problem", format!("{what} not set"));
        let x0 = self.x0.ok_or_else(|| missing("initial state"))?;
        if x0.len() != self.dim {
            return Err(Error::invalid(
                "problem",
                format!("initial state has length {}, dim is {}", x0.len(), self.dim),
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid("problem", "horizon must be positive"));
        }
        let lipschitz = self.lipschitz.ok_or_else(|| missing("lipschitz constant"))?;
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::invalid("problem", "lipschitz constant must be positive"));
        }
        Ok(Problem {
            name: self.name,
            dim: self.dim,
            horizon: self.horizon,
            x0,
            dynamics: self.dynamics.ok_or_else(|| missing("dynamics"))?,
            running_cost: self.running_cost.ok_or_else(|| missing("running cost"))?,
            jacobian: self.jacobian.ok_or_else(|| missing("jacobian"))?,
            cost_gradient: self.cost_gradient.ok_or_else(|| missing("cost gradient"))?,
            hessians: self.hessians.ok_or_else(|| missing("hessians"))?,
            lipschitz,
            modulus: self.modulus.unwrap_or(Modulus::Linear(1.0)),
        })
    }
}

/// All problem data evaluated at one `(t, x, u)`.
#[derive(Clone, Debug)]
pub struct DynamicsEval {
    pub f: DVector<f64>,
    pub f0: f64,
    pub jac: DMatrix<f64>,
    pub cost_grad: DVector<f64>,
    /// Cost Hessian first, then one Hessian per dynamics component.
    pub hessians: Vec<DMatrix<f64>>,
}

impl Problem {
    pub fn builder(name: impl Into<String>, dim: usize, horizon: f64) -> ProblemBuilder {
        ProblemBuilder {
            name: name.into(),
            dim,
            horizon,
            x0: None,
            dynamics: None,
            running_cost: None,
            jacobian: None,
            cost_gradient: None,
            hessians: None,
            lipschitz: None,
            modulus: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    /// A priori sup bound on any admissible trajectory:
    /// `(|x0| + L T) exp(L T)`.
    pub fn reachability_bound(&self) -> f64 {
        let l = self.lipschitz;
        let t = self.horizon;
        (self.x0.norm() + l * t) * (l * t).exp()
    }

    pub fn f(&self, t: f64, x: &DVector<f64>, u: &DomainPoint) -> DVector<f64> {
        (self.dynamics)(t, x, u)
    }

    pub fn f0(&self, t: f64, x: &DVector<f64>, u: &DomainPoint) -> f64 {
        (self.running_cost)(t, x, u)
    }

    pub fn jac(&self, t: f64, x: &DVector<f64>, u: &DomainPoint) -> DMatrix<f64> {
        (self.jacobian)(t, x, u)
    }

    pub fn cost_grad(&self, t: f64, x: &DVector<f64>, u: &DomainPoint) -> DVector<f64> {
        (self.cost_gradient)(t, x, u)
    }

    pub fn hessian_stack(&self, t: f64, x: &DVector<f64>, u: &DomainPoint) -> Vec<DMatrix<f64>> {
        (self.hessians)(t, x, u)
    }

    /// Evaluate everything at once, checking shapes and finiteness. The named
    /// component in the error tells the problem author which closure
    /// misbehaved.
    pub fn eval(&self, t: f64, x: &DVector<f64>, u: &DomainPoint) -> Result<DynamicsEval> {
        let n = self.dim;
        let f = self.f(t, x, u);
        if f.len() != n || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                component: "dynamics",
                t,
            });
        }
        let f0 = self.f0(t, x, u);
        if !f0.is_finite() {
            return Err(Error::NonFinite {
                component: "running cost",
                t,
            });
        }
        let jac = self.jac(t, x, u);
        if jac.nrows() != n || jac.ncols() != n || jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                component: "jacobian",
                t,
            });
        }
        let cost_grad = self.cost_grad(t, x, u);
        if cost_grad.len() != n || cost_grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                component: "cost gradient",
                t,
            });
        }
        let hessians = self.hessian_stack(t, x, u);
        if hessians.len() != n + 1
            || hessians
                .iter()
                .any(|h| h.nrows() != n || h.ncols() != n || h.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                component: "hessians",
                t,
            });
        }
        Ok(DynamicsEval {
            f,
            f0,
            jac,
            cost_grad,
            hessians,
        })
    }
}

/// Piecewise-constant control: one domain-point index per grid interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PiecewiseControl {
    values: Vec<usize>,
}

impl PiecewiseControl {
    pub fn from_values(values: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("control", "no interval values"));
        }
        Ok(PiecewiseControl { values })
    }

    pub fn constant(index: usize, intervals: usize) -> Result<Self> {
        Self::from_values(vec![index; intervals])
    }

    pub fn intervals(&self) -> usize {
        self.values.len()
    }

    pub fn interval_values(&self) -> &[usize] {
        &self.values
    }

    /// Value governing interval `k` (used by every stage of a step over it).
    pub fn at_interval(&self, k: usize) -> usize {
        self.values[k]
    }

    /// Value at node `k` under right continuity, with the final node closed
    /// into the last interval.
    pub fn at_node(&self, k: usize) -> usize {
        self.values[k.min(self.values.len() - 1)]
    }

    pub fn check_domain(&self, domain: &ControlDomain) -> Result<()> {
        for &v in &self.values {
            if v >= domain.len() {
                return Err(Error::IndexOutOfRange {
                    index: v,
                    len: domain.len(),
                });
            }
        }
        Ok(())
    }

    pub fn check_intervals(&self, intervals: usize) -> Result<()> {
        if self.values.len() != intervals {
            return Err(Error::invalid(
                "control",
                format!(
                    "control has {} interval values, grid has {} intervals",
                    self.values.len(),
                    intervals
                ),
            ));
        }
        Ok(())
    }
}

/// Two-point convex relaxation of a control: at each time the base control is
/// kept with weight `1 - alpha` and the probe control injected with weight
/// `alpha`. Dynamics and running cost blend with those weights.
#[derive(Clone, Debug)]
pub struct RelaxedMixture {
    pub base: PiecewiseControl,
    pub probe: PiecewiseControl,
    pub alpha: f64,
}

impl RelaxedMixture {
    pub fn new(base: PiecewiseControl, probe: PiecewiseControl, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(Error::invalid(
                "mixture",
                format!("alpha must lie in [0, 1], got {alpha}"),
            ));
        }
        if base.intervals() != probe.intervals() {
            return Err(Error::invalid(
                "mixture",
                format!(
                    "base has {} intervals, probe {}",
                    base.intervals(),
                    probe.intervals()
                ),
            ));
        }
        Ok(RelaxedMixture { base, probe, alpha })
    }
}

/// Either a plain control or a relaxed mixture; what the trajectory solver
/// accepts.
#[derive(Clone, Copy, Debug)]
pub enum ControlLaw<'a> {
    Plain(&'a PiecewiseControl),
    Mixture(&'a RelaxedMixture),
}

impl<'a> From<&'a PiecewiseControl> for ControlLaw<'a> {
    fn from(c: &'a PiecewiseControl) -> Self {
        ControlLaw::Plain(c)
    }
}

impl<'a> From<&'a RelaxedMixture> for ControlLaw<'a> {
    fn from(m: &'a RelaxedMixture) -> Self {
        ControlLaw::Mixture(m)
    }
}

impl<'a> ControlLaw<'a> {
    pub fn intervals(&self) -> usize {
        match self {
            ControlLaw::Plain(c) => c.intervals(),
            ControlLaw::Mixture(m) => m.base.intervals(),
        }
    }

    pub fn check(&self, domain: &ControlDomain, intervals: usize) -> Result<()> {
        match self {
            ControlLaw::Plain(c) => {
                c.check_domain(domain)?;
                c.check_intervals(intervals)
            }
            ControlLaw::Mixture(m) => {
                m.base.check_domain(domain)?;
                m.base.check_intervals(intervals)?;
                m.probe.check_domain(domain)?;
                m.probe.check_intervals(intervals)
            }
        }
    }
}

/// One derivative cross-check sample.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeSampleCheck {
    pub t: f64,
    pub jacobian_error: f64,
    pub gradient_error: f64,
    pub hessian_error: f64,
}

/// Outcome of `validate_derivatives`.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub step: f64,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub samples: Vec<DerivativeSampleCheck>,
    /// Indices of samples whose worst relative error exceeds the tolerance.
    pub flagged: Vec<usize>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.flagged.is_empty()
    }
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (1.0 + analytic.abs())
}

/// Cross-check the declared Jacobian, cost gradient and Hessians against
/// central finite differences of the dynamics and cost at the given samples.
///
/// `step` is used for first derivatives. Second differences use a wider step
/// scaled as `eps^(1/4) * (1 + |x|)` (never below `step`): at `step = 1e-5`
/// the double cancellation in a second difference already eats six digits,
/// which would drown a 1e-6 tolerance in roundoff.
pub fn validate_derivatives(
    problem: &Problem,
    domain: &ControlDomain,
    samples: &[(f64, DVector<f64>, usize)],
    step: f64,
    tolerance: f64,
) -> Result<ValidationReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid("finite-difference step", format!("{step}")));
    }
    let n = problem.dim();
    let mut rows = Vec::with_capacity(samples.len());
    let mut flagged = Vec::new();
    let mut max_err = 0.0_f64;

    for (idx, (t, x, u_idx)) in samples.iter().enumerate() {
        let u = domain.point(*u_idx)?.clone();
        let t = *t;
        let eval = problem.eval(t, x, &u)?;

        let mut jac_err = 0.0_f64;
        let mut grad_err = 0.0_f64;
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let fp = problem.f(t, &xp, &u);
            let fm = problem.f(t, &xm, &u);
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * step);
                jac_err = jac_err.max(rel_err(fd, eval.jac[(i, j)]));
            }
            let fd0 = (problem.f0(t, &xp, &u) - problem.f0(t, &xm, &u)) / (2.0 * step);
            grad_err = grad_err.max(rel_err(fd0, eval.cost_grad[j]));
        }

        let h2 = (f64::EPSILON.powf(0.25) * (1.0 + x.amax())).max(step);
        let mut hess_err = 0.0_f64;
        let stacked = |y: &DVector<f64>| -> Vec<f64> {
            let mut vals = Vec::with_capacity(n + 1);
            vals.push(problem.f0(t, y, &u));
            let f = problem.f(t, y, &u);
            vals.extend(f.iter().copied());
            vals
        };
        let center = stacked(x);
        for i in 0..n {
            for j in i..n {
                let fds: Vec<f64> = if i == j {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h2;
                    xm[i] -= h2;
                    let vp = stacked(&xp);
                    let vm = stacked(&xm);
                    (0..=n)
                        .map(|c| (vp[c] - 2.0 * center[c] + vm[c]) / (h2 * h2))
                        .collect()
                } else {
                    let shift = |si: f64, sj: f64| {
                        let mut y = x.clone();
                        y[i] += si * h2;
                        y[j] += sj * h2;
                        stacked(&y)
                    };
                    let pp = shift(1.0, 1.0);
                    let pm = shift(1.0, -1.0);
                    let mp = shift(-1.0, 1.0);
                    let mm = shift(-1.0, -1.0);
                    (0..=n)
                        .map(|c| (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h2 * h2))
                        .collect()
                };
                for (c, fd) in fds.iter().enumerate() {
                    hess_err = hess_err.max(rel_err(*fd, eval.hessians[c][(i, j)]));
                }
            }
        }

        let worst = jac_err.max(grad_err).max(hess_err);
        max_err = max_err.max(worst);
        if worst > tolerance {
            flagged.push(idx);
        }
        rows.push(DerivativeSampleCheck {
            t,
            jacobian_error: jac_err,
            gradient_error: grad_err,
            hessian_error: hess_err,
        });
    }

    Ok(ValidationReport {
        step,
        tolerance,
        max_relative_error: max_err,
        samples: rows,
        flagged,
    })
}

/// Deterministic sample set for derivative checks: times and states drawn
/// uniformly from `[0, horizon] x box`, control indices uniformly from the
/// domain.
pub fn derivative_check_samples(
    problem: &Problem,
    domain: &ControlDomain,
    count: usize,
    box_radius: f64,
    seed: u64,
) -> Vec<(f64, DVector<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.dim();
    (0..count)
        .map(|_| {
            let t = rng.gen_range(0.0..=problem.horizon());
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-box_radius..=box_radius));
            let u = rng.gen_range(0..domain.len());
            (t, x, u)
        })
        .collect()
}

/// One observed breach of the declared regularity data.
#[derive(Clone, Debug, Serialize)]
pub struct RegularityViolation {
    pub condition: String,
    pub t: f64,
    pub observed: f64,
    pub bound: f64,
}

/// Outcome of `audit_regularity`.
#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub sample_count: usize,
    pub box_radius: f64,
    pub declared_lipschitz: f64,
    pub modulus: String,
    /// Smallest Lipschitz constant consistent with the sampled increments.
    pub empirical_lipschitz: f64,
    /// Largest sampled ratio increment / omega(argument); at most 1 when the
    /// declared modulus really majorizes the data.
    pub empirical_modulus_ratio: f64,
    pub violations: Vec<RegularityViolation>,
}

impl RegularityReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Frobenius norm of the stacked first derivative (cost gradient row over the
/// dynamics Jacobian).
fn stacked_deriv_norm_sq(grad: &DVector<f64>, jac: &DMatrix<f64>) -> f64 {
    grad.iter().map(|v| v * v).sum::<f64>() + jac.iter().map(|v| v * v).sum::<f64>()
}

/// Sample the declared Lipschitz constant and modulus of continuity on random
/// argument pairs and report every breach. Reporting only: the caller decides
/// what a violation means.
///
/// `box_radius` bounds the sampled states; pass `None` to fall back to the a
/// priori reachability bound (which is wide, so quadratic-in-state data
/// declared for a tighter operating box should pass that box explicitly).
pub fn audit_regularity(
    problem: &Problem,
    domain: &ControlDomain,
    sample_count: usize,
    box_radius: Option<f64>,
    seed: u64,
) -> Result<RegularityReport> {
    let radius = match box_radius {
        Some(r) => {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid("state box", format!("radius {r}")));
            }
            r
        }
        None => problem.reachability_bound(),
    };
    let n = problem.dim();
    let l = problem.lipschitz();
    let omega = problem.modulus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut empirical_l = 0.0_f64;
    let mut modulus_ratio = 0.0_f64;
    // Strict-inequality slack so exact equality cases (tight declared data)
    // do not flag on roundoff.
    let slack = 1.0 + 1e-9;
    let absolute_slack = 1e-12;

    for _ in 0..sample_count {
        let t = rng.gen_range(0.0..=problem.horizon());
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-radius..=radius));
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-radius..=radius));
        let ui = rng.gen_range(0..domain.len());
        let vi = rng.gen_range(0..domain.len());
        let u = domain.point(ui)?.clone();
        let v = domain.point(vi)?.clone();

        let ex = problem.eval(t, &x, &u)?;
        let ey = problem.eval(t, &y, &u)?;
        let dx = (&x - &y).norm();

        // State Lipschitz bound on the stacked (cost, dynamics) map.
        let df = {
            let d0 = ex.f0 - ey.f0;
            (d0 * d0 + (&ex.f - &ey.f).norm_squared()).sqrt()
        };
        if dx > 1e-12 {
            empirical_l = empirical_l.max(df / dx);
            if df > l * dx * slack + absolute_slack {
                violations.push(RegularityViolation {
                    condition: "lipschitz in state".into(),
                    t,
                    observed: df / dx,
                    bound: l,
                });
            }
        }

        // Linear growth at the origin.
        let zero = DVector::zeros(n);
        let e0 = problem.eval(t, &zero, &u)?;
        let f_at_zero = (e0.f0 * e0.f0 + e0.f.norm_squared()).sqrt();
        empirical_l = empirical_l.max(f_at_zero);
        if f_at_zero > l * slack + absolute_slack {
            violations.push(RegularityViolation {
                condition: "growth at origin".into(),
                t,
                observed: f_at_zero,
                bound: l,
            });
        }

        // State Lipschitz bound on the stacked first derivative.
        if dx > 1e-12 {
            let dgrad = &ex.cost_grad - &ey.cost_grad;
            let djac = &ex.jac - &ey.jac;
            let dderiv = stacked_deriv_norm_sq(&dgrad, &djac).sqrt();
            empirical_l = empirical_l.max(dderiv / dx);
            if dderiv > l * dx * slack + absolute_slack {
                violations.push(RegularityViolation {
                    condition: "lipschitz of derivatives in state".into(),
                    t,
                    observed: dderiv / dx,
                    bound: l,
                });
            }
        }

        // Modulus bound on control increments of the stacked map and its
        // derivative, at a common state.
        let rho = domain.distance(ui, vi)?;
        if rho > 1e-15 {
            let exv = problem.eval(t, &x, &v)?;
            let d0 = ex.f0 - exv.f0;
            let dfu = (d0 * d0 + (&ex.f - &exv.f).norm_squared()).sqrt();
            let bound = omega.eval(rho);
            modulus_ratio = modulus_ratio.max(dfu / bound.max(1e-300));
            if dfu > bound * slack + absolute_slack {
                violations.push(RegularityViolation {
                    condition: "modulus on dynamics and cost".into(),
                    t,
                    observed: dfu,
                    bound,
                });
            }
            let dgrad = &ex.cost_grad - &exv.cost_grad;
            let djac = &ex.jac - &exv.jac;
            let dderiv = stacked_deriv_norm_sq(&dgrad, &djac).sqrt();
            modulus_ratio = modulus_ratio.max(dderiv / bound.max(1e-300));
            if dderiv > bound * slack + absolute_slack {
                violations.push(RegularityViolation {
                    condition: "modulus on derivatives".into(),
                    t,
                    observed: dderiv,
                    bound,
                });
            }
        }

        // Joint modulus bound on the Hessians in (state, control).
        let eyv = problem.eval(t, &y, &v)?;
        let arg = dx + rho;
        if arg > 1e-15 {
            let mut dh = 0.0_f64;
            for (a, b) in ex.hessians.iter().zip(&eyv.hessians) {
                dh = dh.max((a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs())));
            }
            let bound = omega.eval(arg);
            if dh > bound * slack + absolute_slack {
                violations.push(RegularityViolation {
                    condition: "modulus on hessians".into(),
                    t,
                    observed: dh,
                    bound,
                });
            }
        }
    }

    Ok(RegularityReport {
        sample_count,
        box_radius: radius,
        declared_lipschitz: l,
        modulus: omega.describe(),
        empirical_lipschitz: empirical_l,
        empirical_modulus_ratio: modulus_ratio,
        violations,
    })
}
