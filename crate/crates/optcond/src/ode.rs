//! Fixed-step numerics on a shared uniform time grid.
//!
//! Everything downstream (trajectories, adjoints, quadratures, oracles) runs on
//! one `TimeGrid` so that discretization error cancels in difference quotients
//! instead of polluting them. The integrator is classical fourth-order
//! Runge-Kutta with a fixed step; backward sweeps run the same scheme in
//! reversed time. All loops accumulate in a fixed order, so identical inputs
//! produce bitwise identical outputs.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform grid on `[0, t_end]` with `intervals` equal steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    intervals: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, intervals: usize) -> Result<Self> {
        if !t_end.is_finite() || t_end <= 0.0 {
            return Err(Error::invalid(
                "time grid",
                format!("horizon must be positive and finite, got {t_end}"),
            ));
        }
        if intervals == 0 {
            return Err(Error::invalid("time grid", "need at least one interval"));
        }
        Ok(TimeGrid { t_end, intervals })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn num_nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.intervals as f64
    }

    /// Node `k`, with the right endpoint pinned to `t_end` exactly.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.intervals);
        if k == self.intervals {
            self.t_end
        } else {
            k as f64 * self.step()
        }
    }

    /// Midpoint of interval `k`.
    pub fn midpoint(&self, k: usize) -> f64 {
        debug_assert!(k < self.intervals);
        (k as f64 + 0.5) * self.step()
    }

    /// Quadrature weight of node `k` (trapezoid weights: h/2 at the ends).
    pub fn node_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.intervals {
            0.5 * self.step()
        } else {
            self.step()
        }
    }
}

/// Where within a step the integrator is asking for the field.
///
/// `Left`/`Right` are the interval endpoints, `Mid` the midpoint. Piecewise
/// constant controls always answer with the interval's own value, including at
/// the right endpoint; known grid series answer with the endpoint average at
/// `Mid`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageLoc {
    Left,
    Mid,
    Right,
}

/// A stage abscissa: interval index, location within it, and absolute time.
#[derive(Clone, Copy, Debug)]
pub struct StagePoint {
    pub interval: usize,
    pub loc: StageLoc,
    pub t: f64,
}

impl StagePoint {
    /// Stage view of grid node `k`: the left edge of interval `k`, or the
    /// right edge of the final interval for the last node.
    pub fn node(grid: &TimeGrid, k: usize) -> Self {
        if k < grid.intervals() {
            StagePoint {
                interval: k,
                loc: StageLoc::Left,
                t: grid.node(k),
            }
        } else {
            StagePoint {
                interval: grid.intervals() - 1,
                loc: StageLoc::Right,
                t: grid.node(k),
            }
        }
    }
}

/// State value the integrator can advance: needs `y += c * k` and a max-abs
/// norm for divergence checks.
pub trait StateVector: Clone {
    fn scaled_add(&mut self, coeff: f64, other: &Self);
    fn scale(&mut self, coeff: f64);
    fn max_abs(&self) -> f64;
    fn all_finite(&self) -> bool;
}

impl StateVector for f64 {
    fn scaled_add(&mut self, coeff: f64, other: &Self) {
        *self += coeff * other;
    }

    fn scale(&mut self, coeff: f64) {
        *self *= coeff;
    }

    fn max_abs(&self) -> f64 {
        self.abs()
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl StateVector for DVector<f64> {
    fn scaled_add(&mut self, coeff: f64, other: &Self) {
        self.axpy(coeff, other, 1.0);
    }

    fn scale(&mut self, coeff: f64) {
        *self *= coeff;
    }

    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl StateVector for DMatrix<f64> {
    fn scaled_add(&mut self, coeff: f64, other: &Self) {
        self.zip_apply(other, |a, b| *a += coeff * b);
    }

    fn scale(&mut self, coeff: f64) {
        *self *= coeff;
    }

    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Values attached to every node of a `TimeGrid`.
#[derive(Clone, Debug)]
pub struct GridFunction<V> {
    grid: TimeGrid,
    values: Vec<V>,
}

impl<V: StateVector> GridFunction<V> {
    pub fn from_values(grid: TimeGrid, values: Vec<V>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::invalid(
                "grid function",
                format!(
                    "expected {} node values, got {}",
                    grid.num_nodes(),
                    values.len()
                ),
            ));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(usize, f64) -> V) -> Self {
        let values = (0..grid.num_nodes()).map(|k| f(k, grid.node(k))).collect();
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn value(&self, k: usize) -> &V {
        &self.values[k]
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [V] {
        &mut self.values
    }

    /// Value at a stage point: node value at the endpoints, endpoint average at
    /// the midpoint. Exact whenever the series is linear in `t` over the step.
    pub fn stage_value(&self, sp: StagePoint) -> V {
        match sp.loc {
            StageLoc::Left => self.values[sp.interval].clone(),
            StageLoc::Right => self.values[sp.interval + 1].clone(),
            StageLoc::Mid => {
                let mut v = self.values[sp.interval].clone();
                v.scaled_add(1.0, &self.values[sp.interval + 1]);
                v.scale(0.5);
                v
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.max_abs()))
    }

    /// Max over nodes of the max-abs difference.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| {
                let mut d = a.clone();
                d.scaled_add(-1.0, b);
                m.max(d.max_abs())
            })
    }
}

/// Flattening into CSV columns: one row per node, `t` first, then the value
/// components (row-major for matrices).
pub trait Components {
    fn component_count(&self) -> usize;
    fn components(&self) -> Vec<f64>;
}

impl Components for f64 {
    fn component_count(&self) -> usize {
        1
    }

    fn components(&self) -> Vec<f64> {
        vec![*self]
    }
}

impl Components for DVector<f64> {
    fn component_count(&self) -> usize {
        self.len()
    }

    fn components(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }
}

impl Components for DMatrix<f64> {
    fn component_count(&self) -> usize {
        self.nrows() * self.ncols()
    }

    fn components(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.component_count());
        for r in 0..self.nrows() {
            for c in 0..self.ncols() {
                out.push(self[(r, c)]);
            }
        }
        out
    }
}

impl<V: StateVector + Components> GridFunction<V> {
    /// Write `t,v0,...,v{m-1}` rows. Floats use the shortest round-trip form,
    /// so the byte output is deterministic.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        let m = self.values.first().map_or(0, Components::component_count);
        write!(w, "t")?;
        for i in 0..m {
            write!(w, ",v{i}")?;
        }
        writeln!(w)?;
        for (k, v) in self.values.iter().enumerate() {
            write!(w, "{}", self.grid.node(k))?;
            for c in v.components() {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Direction of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// RK4 with the field evaluated at tagged stage points.
///
/// Forward sweeps start from `y0` at node 0; backward sweeps start from `y0`
/// at the final node and fill the grid from the right. The stage tags let
/// fields resolve piecewise-constant control values by interval rather than by
/// time lookup, which keeps the scheme exact for per-interval-constant
/// forcing.
pub fn integrate_stages<V: StateVector>(
    mut field: impl FnMut(StagePoint, &V) -> V,
    y0: V,
    grid: &TimeGrid,
    direction: Direction,
) -> Result<GridFunction<V>> {
    if !y0.all_finite() {
        return Err(Error::invalid("initial value", "non-finite entries"));
    }
    let n = grid.intervals();
    let h = grid.step();
    let mut values: Vec<Option<V>> = vec![None; grid.num_nodes()];

    let mut step = |k: usize, y: &V, dir: Direction| -> V {
        // Stage order runs from the sweep's starting end of the interval.
        let (signed_h, locs, times) = match dir {
            Direction::Forward => (
                h,
                [StageLoc::Left, StageLoc::Mid, StageLoc::Mid, StageLoc::Right],
                [grid.node(k), grid.midpoint(k), grid.midpoint(k), grid.node(k + 1)],
            ),
            Direction::Backward => (
                -h,
                [StageLoc::Right, StageLoc::Mid, StageLoc::Mid, StageLoc::Left],
                [grid.node(k + 1), grid.midpoint(k), grid.midpoint(k), grid.node(k)],
            ),
        };
        let sp = |i: usize| StagePoint {
            interval: k,
            loc: locs[i],
            t: times[i],
        };
        let k1 = field(sp(0), y);
        let mut y2 = y.clone();
        y2.scaled_add(signed_h / 2.0, &k1);
        let k2 = field(sp(1), &y2);
        let mut y3 = y.clone();
        y3.scaled_add(signed_h / 2.0, &k2);
        let k3 = field(sp(2), &y3);
        let mut y4 = y.clone();
        y4.scaled_add(signed_h, &k3);
        let k4 = field(sp(3), &y4);
        let mut out = y.clone();
        out.scaled_add(signed_h / 6.0, &k1);
        out.scaled_add(signed_h / 3.0, &k2);
        out.scaled_add(signed_h / 3.0, &k3);
        out.scaled_add(signed_h / 6.0, &k4);
        out
    };

    match direction {
        Direction::Forward => {
            values[0] = Some(y0);
            for k in 0..n {
                let y = values[k].as_ref().unwrap();
                let next = step(k, y, Direction::Forward);
                if !next.all_finite() {
                    return Err(Error::Diverged {
                        node: k + 1,
                        t: grid.node(k + 1),
                    });
                }
                values[k + 1] = Some(next);
            }
        }
        Direction::Backward => {
            values[n] = Some(y0);
            for k in (0..n).rev() {
                let y = values[k + 1].as_ref().unwrap();
                let prev = step(k, y, Direction::Backward);
                if !prev.all_finite() {
                    return Err(Error::Diverged {
                        node: k,
                        t: grid.node(k),
                    });
                }
                values[k] = Some(prev);
            }
        }
    }

    let values = values.into_iter().map(Option::unwrap).collect();
    GridFunction::from_values(*grid, values)
}

/// RK4 for plain `(t, y)` fields.
pub fn integrate<V: StateVector>(
    mut field: impl FnMut(f64, &V) -> V,
    y0: V,
    grid: &TimeGrid,
    direction: Direction,
) -> Result<GridFunction<V>> {
    integrate_stages(|sp, y| field(sp.t, y), y0, grid, direction)
}

/// Result of `quad`: the integral and whether the odd-length tail fell back to
/// the trapezoid rule.
#[derive(Clone, Copy, Debug)]
pub struct QuadValue {
    pub value: f64,
    pub trapezoid_tail: bool,
}

/// Composite Simpson rule over the node series. An odd interval count is
/// handled by Simpson over the even prefix plus a trapezoid on the last
/// interval, flagged in the result.
pub fn quad(series: &GridFunction<f64>) -> QuadValue {
    let n = series.grid().intervals();
    let h = series.grid().step();
    let v = series.values();
    let simpson_intervals = if n % 2 == 0 { n } else { n - 1 };
    let mut acc = 0.0;
    let mut k = 0;
    while k + 2 <= simpson_intervals {
        acc += h / 3.0 * (v[k] + 4.0 * v[k + 1] + v[k + 2]);
        k += 2;
    }
    let mut trapezoid_tail = false;
    if n % 2 == 1 {
        acc += h / 2.0 * (v[n - 1] + v[n]);
        trapezoid_tail = true;
    }
    QuadValue {
        value: acc,
        trapezoid_tail,
    }
}

/// Cumulative trapezoid rule: `out[k]` approximates the integral over
/// `[0, t_k]` of the node series.
pub fn cumtrap(series: &GridFunction<f64>) -> GridFunction<f64> {
    let grid = series.grid();
    let h = grid.step();
    let v = series.values();
    let mut out = Vec::with_capacity(grid.num_nodes());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..grid.intervals() {
        acc += h / 2.0 * (v[k] + v[k + 1]);
        out.push(acc);
    }
    GridFunction::from_values(grid, out).expect("length matches by construction")
}

/// Double integral over the triangle `0 <= s <= t <= T` of a kernel given at
/// node pairs: trapezoid in `s` for each node `t`, then `quad` in `t`.
/// Rows and the inner sums are accumulated in ascending index order.
pub fn tri_double_integral(
    kernel: impl Fn(usize, usize) -> f64,
    grid: &TimeGrid,
) -> Result<f64> {
    let h = grid.step();
    let mut inner = Vec::with_capacity(grid.num_nodes());
    for k in 0..grid.num_nodes() {
        let mut acc = 0.0;
        if k > 0 {
            for j in 0..=k {
                let v = kernel(k, j);
                if !v.is_finite() {
                    return Err(Error::KernelNonFinite {
                        t_node: k,
                        s_node: j,
                    });
                }
                let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                acc += w * v;
            }
            acc *= h;
        } else {
            let v = kernel(0, 0);
            if !v.is_finite() {
                return Err(Error::KernelNonFinite {
                    t_node: 0,
                    s_node: 0,
                });
            }
        }
        inner.push(acc);
    }
    let series = GridFunction::from_values(*grid, inner)?;
    Ok(quad(&series).value)
}

/// Integral over `[0, T]` of an integrand evaluated at stage points, by
/// Simpson's rule applied separately on every interval.
///
/// Node-sampled composite rules silently average across interval boundaries;
/// when the integrand jumps there (piecewise-constant controls) that leaves
/// an O(h) bias proportional to the jump sizes. Evaluating left, midpoint,
/// and right stages within each interval keeps every sample on one side of
/// each jump, so the rule is exact for integrands that are piecewise
/// quadratic per interval and fourth-order otherwise.
pub fn interval_simpson(grid: &TimeGrid, mut g: impl FnMut(StagePoint) -> f64) -> f64 {
    let h = grid.step();
    let mut acc = 0.0;
    for k in 0..grid.intervals() {
        let gl = g(StagePoint {
            interval: k,
            loc: StageLoc::Left,
            t: grid.node(k),
        });
        let gm = g(StagePoint {
            interval: k,
            loc: StageLoc::Mid,
            t: grid.midpoint(k),
        });
        let gr = g(StagePoint {
            interval: k,
            loc: StageLoc::Right,
            t: grid.node(k + 1),
        });
        acc += h / 6.0 * (gl + 4.0 * gm + gr);
    }
    acc
}

/// Cumulative integral of a stage-evaluated integrand, trapezoid per
/// interval: `out[k]` approximates the integral over `[0, t_k]`, with both
/// endpoint evaluations of interval `k` tagged as belonging to interval `k`
/// (so a jumping integrand is sampled on the correct side at each node).
pub fn interval_cumtrap<V: StateVector>(
    grid: &TimeGrid,
    mut g: impl FnMut(StagePoint) -> V,
) -> GridFunction<V> {
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.num_nodes());
    let mut left = g(StagePoint {
        interval: 0,
        loc: StageLoc::Left,
        t: grid.node(0),
    });
    let mut acc = left.clone();
    acc.scale(0.0);
    values.push(acc.clone());
    for k in 0..grid.intervals() {
        let right = g(StagePoint {
            interval: k,
            loc: StageLoc::Right,
            t: grid.node(k + 1),
        });
        acc.scaled_add(h / 2.0, &left);
        acc.scaled_add(h / 2.0, &right);
        values.push(acc.clone());
        if k + 1 < grid.intervals() {
            left = g(StagePoint {
                interval: k + 1,
                loc: StageLoc::Left,
                t: grid.node(k + 1),
            });
        }
    }
    GridFunction::from_values(*grid, values).expect("length matches by construction")
}
