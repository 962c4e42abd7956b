use std::fs;
use std::io::{BufWriter, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use optcond::builtins::{builtin_problem_with, BuiltinInstance, BUILTIN_STATE_BOX};
use optcond::families::generate_family;
use optcond::ode::TimeGrid;
use optcond::pmp::{pmp_residual, singular_set, PmpReport, SingularSet, SingularTolerance};
use optcond::problem::{derivative_check_samples, validate_derivatives, PiecewiseControl};
use optcond::relaxation::{chattering_convergence, fit_quotient_bounds};
use optcond::soc::{
    growth_check, necessary_q, pointwise_test, second_quotient_oracle, sufficient_fit,
    FitOutcome, QOutcome, SocKernelContext, SocReport,
};
use optcond::trajectories::{
    solve_adjoint_bundle, solve_state, AdjointBundle, IntegrityTolerances, TrajectoryBundle,
};

use crate::config::RunConfig;
use crate::layout::{write_json, Layout};

pub struct Instance {
    pub grid: TimeGrid,
    pub inst: BuiltinInstance,
}

pub struct Solved {
    pub base: TrajectoryBundle,
    pub adjoints: AdjointBundle,
}

pub fn load(config: &RunConfig) -> Result<Instance> {
    let grid = TimeGrid::new(1.0, config.grid_n)?;
    let inst = builtin_problem_with(&config.problem_id, &grid, config.domain_samples)?;
    Ok(Instance { grid, inst })
}

impl Instance {
    pub fn solve(&self, config: &RunConfig) -> Result<Solved> {
        let base = solve_state(
            &self.inst.problem,
            &self.inst.domain,
            (&self.inst.candidate).into(),
            &self.grid,
        )?;
        let tol = IntegrityTolerances {
            phi_defect: config.tol_inv,
            ..IntegrityTolerances::default()
        };
        let adjoints = solve_adjoint_bundle(
            &self.inst.problem,
            &self.inst.domain,
            &base,
            &self.inst.candidate,
            &self.grid,
            &tol,
        )?;
        Ok(Solved { base, adjoints })
    }

    /// The probe used by convergence sweeps: the domain point nearest zero,
    /// or the last point when the candidate already sits there throughout.
    pub fn default_probe(&self) -> PiecewiseControl {
        let near_zero = self.inst.domain.nearest_scalar(0.0);
        let index = if self
            .inst
            .candidate
            .interval_values()
            .iter()
            .all(|v| *v == near_zero)
        {
            self.inst.domain.len() - 1
        } else {
            near_zero
        };
        PiecewiseControl::constant(index, self.grid.intervals()).expect("nonzero intervals")
    }
}

#[derive(Serialize)]
#[serde(untagged)]
pub enum SufficientVerdict {
    Margin(f64),
    NotEstablished(&'static str),
}

impl SufficientVerdict {
    fn not_established() -> Self {
        SufficientVerdict::NotEstablished("not_established")
    }
}

#[derive(Serialize)]
pub struct Verdict {
    pub pmp: &'static str,
    /// `null` when gated off by a failed maximum condition.
    pub soc_necessary: Option<&'static str>,
    pub pointwise: Option<&'static str>,
    pub sufficient: SufficientVerdict,
    pub artifacts: Vec<String>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    timestamp_unix_seconds: u64,
    subcommand: &'a str,
    config: &'a RunConfig,
    derivative_check_max_error: Option<f64>,
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_meta(
    layout: &Layout,
    config: &RunConfig,
    subcommand: &str,
    derivative_check_max_error: Option<f64>,
) -> Result<()> {
    let meta = RunMeta {
        timestamp_unix_seconds: unix_seconds(),
        subcommand,
        config,
        derivative_check_max_error,
    };
    write_json(&layout.path("run_meta.json"), &meta)
}

fn write_series(
    layout: &Layout,
    artifacts: &mut Vec<String>,
    solved: &Solved,
    pmp: &PmpReport,
) -> Result<()> {
    let series: [(&str, &dyn Fn(&mut dyn Write) -> std::io::Result<()>); 4] = [
        ("series/x_bar.csv", &|w| solved.base.x.write_csv(w)),
        ("series/psi.csv", &|w| solved.adjoints.psi.write_csv(w)),
        ("series/w.csv", &|w| solved.adjoints.w.write_csv(w)),
        ("series/residual.csv", &|w| pmp.residual.write_csv(w)),
    ];
    for (name, writer) in series {
        let path = layout.path(name);
        let mut file = BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        writer(&mut file)?;
        file.flush()?;
        artifacts.push(layout.relative(name));
    }
    Ok(())
}

fn write_singular_set(
    layout: &Layout,
    artifacts: &mut Vec<String>,
    grid: &TimeGrid,
    set: &SingularSet,
) -> Result<()> {
    let path = layout.path("singular_set.csv");
    let mut file = BufWriter::new(fs::File::create(&path)?);
    writeln!(file, "node,t,member_index")?;
    for k in 0..grid.num_nodes() {
        for &m in &set.members[k] {
            writeln!(file, "{},{},{m}", k, grid.node(k))?;
        }
    }
    file.flush()?;
    artifacts.push(layout.relative("singular_set.csv"));
    Ok(())
}

fn write_kernels(
    layout: &Layout,
    artifacts: &mut Vec<String>,
    ctx: &SocKernelContext,
    u: &PiecewiseControl,
) -> Result<()> {
    let grid = ctx.grid();
    let path = layout.path("kernels.csv");
    let mut file = BufWriter::new(fs::File::create(&path)?);
    writeln!(file, "node_t,node_s,value")?;
    for k in 0..grid.num_nodes() {
        let f = optcond::soc::kernel_f(ctx, k, u.at_node(k))?;
        for j in 0..=k {
            let g = optcond::soc::kernel_g(ctx, j, u.at_node(j))?;
            writeln!(file, "{k},{j},{}", f.dot(&g))?;
        }
    }
    file.flush()?;
    artifacts.push(layout.relative("kernels.csv"));
    Ok(())
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SOC_VERIFY_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder.build().context("building worker pool")
}

fn check_derivatives(config: &RunConfig, instance: &Instance) -> Result<f64> {
    let samples = derivative_check_samples(
        &instance.inst.problem,
        &instance.inst.domain,
        25,
        BUILTIN_STATE_BOX,
        7,
    );
    let report = validate_derivatives(
        &instance.inst.problem,
        &instance.inst.domain,
        &samples,
        1e-5,
        config.tol_fd,
    )?;
    if !report.pass() {
        return Err(optcond::Error::Inconsistent(format!(
            "declared derivatives disagree with finite differences (worst relative error \
             {:.3e} over tolerance {:.3e})",
            report.max_relative_error, config.tol_fd
        ))
        .into());
    }
    Ok(report.max_relative_error)
}

struct SocOutcome {
    report: SocReport,
    sufficient: SufficientVerdict,
    set: SingularSet,
}

fn run_soc_stage(
    config: &RunConfig,
    instance: &Instance,
    solved: &Solved,
    with_sufficient: bool,
) -> Result<SocOutcome> {
    let ctx = SocKernelContext::new(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &solved.base,
        &solved.adjoints,
        &instance.grid,
    )?;
    let set = singular_set(
        &instance.inst.problem,
        &instance.inst.domain,
        &solved.base.x,
        &solved.adjoints.psi,
        &instance.grid,
        SingularTolerance::Absolute(config.eta_pmp),
    )?;
    let family = generate_family(
        &instance.inst.domain,
        instance.grid.intervals(),
        &config.family,
    )?;
    let mut singular_members = Vec::new();
    for (i, u) in family.iter().enumerate() {
        let (flag, _) = optcond::pmp::is_singular(&set, u, &instance.grid, 0.0)?;
        if flag {
            singular_members.push(i);
        }
    }

    let pool = worker_pool()?;
    let qs: Vec<f64> = pool.install(|| {
        singular_members
            .par_iter()
            .map(|&i| necessary_q(&ctx, &family[i]))
            .collect::<optcond::Result<Vec<_>>>()
    })?;
    let mut worst_q = None;
    let mut worst_member = None;
    let mut q_violated = false;
    for (&member, &q) in singular_members.iter().zip(&qs) {
        if QOutcome::evaluate(q, config.eta_soc).violated {
            q_violated = true;
        }
        if worst_q.is_none_or(|w| q > w) {
            worst_q = Some(q);
            worst_member = Some(member);
        }
    }

    let pointwise = pointwise_test(&ctx, &set, config.eta_soc)?;

    let mut beta_hat = None;
    let mut growth_failures = Vec::new();
    let mut sufficient = SufficientVerdict::not_established();
    if with_sufficient && !q_violated && pointwise.pass {
        let fit = sufficient_fit(&ctx, &family)?;
        if let FitOutcome::Established { beta_hat: beta, .. } = fit.outcome {
            beta_hat = Some(beta);
            let growth = growth_check(&ctx, &family, beta, config.eps0, config.tol_growth)?;
            growth_failures = growth.failures;
            if growth.pass {
                sufficient = SufficientVerdict::Margin(beta);
            }
        }
    }

    Ok(SocOutcome {
        report: SocReport {
            eta: config.eta_soc,
            worst_q,
            worst_member,
            singular_members,
            q_violated,
            pointwise,
            beta_hat,
            growth_failures,
        },
        sufficient,
        set,
    })
}

fn describe_verdict(verdict: &Verdict, config: &RunConfig) {
    println!(
        "problem {}, grid N = {}, family seed {}",
        config.problem_id, config.grid_n, config.family.seed
    );
    println!("pmp: {}", verdict.pmp);
    match verdict.soc_necessary {
        Some(v) => println!("soc necessary: {v}"),
        None => println!("soc necessary: skipped (maximum condition failed)"),
    }
    if let Some(v) = verdict.pointwise {
        println!("pointwise: {v}");
    }
    match &verdict.sufficient {
        SufficientVerdict::Margin(beta) => println!("sufficient margin: beta_hat = {beta:.6}"),
        SufficientVerdict::NotEstablished(_) => println!("sufficient margin: not established"),
    }
}

pub fn run_check(config: &RunConfig) -> Result<i32> {
    let layout = Layout::new(config);
    layout.ensure()?;
    let instance = load(config)?;
    let derivative_error = check_derivatives(config, &instance)?;
    let solved = instance.solve(config)?;
    let pmp = pmp_residual(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &solved.base.x,
        &solved.adjoints.psi,
        &instance.grid,
        config.eta_pmp,
    )?;

    let mut artifacts = Vec::new();
    write_json(&layout.path("pmp.json"), &pmp)?;
    artifacts.push(layout.relative("pmp.json"));
    write_series(&layout, &mut artifacts, &solved, &pmp)?;

    let verdict;
    let exit;
    if pmp.pass {
        let outcome = run_soc_stage(config, &instance, &solved, true)?;
        write_json(&layout.path("soc.json"), &outcome.report)?;
        artifacts.push(layout.relative("soc.json"));
        write_singular_set(&layout, &mut artifacts, &instance.grid, &outcome.set)?;
        if config.export_kernels {
            if let Some(worst) = outcome.report.worst_member {
                let family = generate_family(
                    &instance.inst.domain,
                    instance.grid.intervals(),
                    &config.family,
                )?;
                let ctx = SocKernelContext::new(
                    &instance.inst.problem,
                    &instance.inst.domain,
                    &instance.inst.candidate,
                    &solved.base,
                    &solved.adjoints,
                    &instance.grid,
                )?;
                write_kernels(&layout, &mut artifacts, &ctx, &family[worst])?;
            }
        }
        let violated = outcome.report.q_violated || !outcome.report.pointwise.pass;
        artifacts.push(layout.relative("verdict.json"));
        artifacts.push(layout.relative("run_meta.json"));
        verdict = Verdict {
            pmp: "pass",
            soc_necessary: Some(if outcome.report.q_violated {
                "violated"
            } else {
                "pass"
            }),
            pointwise: Some(if outcome.report.pointwise.pass {
                "pass"
            } else {
                "violated"
            }),
            sufficient: outcome.sufficient,
            artifacts,
        };
        exit = if violated { 1 } else { 0 };
    } else {
        artifacts.push(layout.relative("verdict.json"));
        artifacts.push(layout.relative("run_meta.json"));
        verdict = Verdict {
            pmp: "fail",
            soc_necessary: None,
            pointwise: None,
            sufficient: SufficientVerdict::not_established(),
            artifacts,
        };
        exit = 1;
    }
    write_json(&layout.path("verdict.json"), &verdict)?;
    write_meta(&layout, config, "check", Some(derivative_error))?;
    describe_verdict(&verdict, config);
    Ok(exit)
}

pub fn run_pmp(config: &RunConfig) -> Result<i32> {
    let layout = Layout::new(config);
    layout.ensure()?;
    let instance = load(config)?;
    let solved = instance.solve(config)?;
    let pmp = pmp_residual(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &solved.base.x,
        &solved.adjoints.psi,
        &instance.grid,
        config.eta_pmp,
    )?;
    let mut artifacts = Vec::new();
    write_json(&layout.path("pmp.json"), &pmp)?;
    artifacts.push(layout.relative("pmp.json"));
    write_series(&layout, &mut artifacts, &solved, &pmp)?;
    write_meta(&layout, config, "pmp", None)?;
    println!(
        "pmp: {} (max residual {:.6e}, violation measure {:.6e})",
        if pmp.pass { "pass" } else { "fail" },
        pmp.max_residual,
        pmp.violation_measure
    );
    Ok(if pmp.pass { 0 } else { 1 })
}

pub fn run_soc(config: &RunConfig) -> Result<i32> {
    let layout = Layout::new(config);
    layout.ensure()?;
    let instance = load(config)?;
    let solved = instance.solve(config)?;
    let pmp = pmp_residual(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &solved.base.x,
        &solved.adjoints.psi,
        &instance.grid,
        config.eta_pmp,
    )?;
    let mut artifacts = Vec::new();
    write_json(&layout.path("pmp.json"), &pmp)?;
    artifacts.push(layout.relative("pmp.json"));
    write_series(&layout, &mut artifacts, &solved, &pmp)?;
    if !pmp.pass {
        write_meta(&layout, config, "soc", None)?;
        println!("pmp: fail; second-order checks skipped");
        return Ok(1);
    }
    let outcome = run_soc_stage(config, &instance, &solved, false)?;
    write_json(&layout.path("soc.json"), &outcome.report)?;
    artifacts.push(layout.relative("soc.json"));
    write_singular_set(&layout, &mut artifacts, &instance.grid, &outcome.set)?;
    write_meta(&layout, config, "soc", None)?;
    let violated = outcome.report.q_violated || !outcome.report.pointwise.pass;
    match outcome.report.worst_q {
        Some(q) => println!(
            "soc necessary: {} (worst Q {q:.6e} from member {})",
            if outcome.report.q_violated { "violated" } else { "pass" },
            outcome.report.worst_member.unwrap()
        ),
        None => println!("soc necessary: pass (no singular family members)"),
    }
    println!(
        "pointwise: {} (violation measure {:.6e})",
        if outcome.report.pointwise.pass { "pass" } else { "violated" },
        outcome.report.pointwise.violation_measure
    );
    Ok(if violated { 1 } else { 0 })
}

#[derive(Serialize)]
struct SufficientArtifact {
    fit: optcond::soc::FitReport,
    growth: Option<optcond::soc::GrowthReport>,
}

pub fn run_sufficient(config: &RunConfig) -> Result<i32> {
    let layout = Layout::new(config);
    layout.ensure()?;
    let instance = load(config)?;
    let solved = instance.solve(config)?;
    let pmp = pmp_residual(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &solved.base.x,
        &solved.adjoints.psi,
        &instance.grid,
        config.eta_pmp,
    )?;
    if !pmp.pass {
        write_meta(&layout, config, "sufficient", None)?;
        println!("pmp: fail; sufficient check skipped");
        return Ok(1);
    }
    let ctx = SocKernelContext::new(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &solved.base,
        &solved.adjoints,
        &instance.grid,
    )?;
    let family = generate_family(
        &instance.inst.domain,
        instance.grid.intervals(),
        &config.family,
    )?;
    let fit = sufficient_fit(&ctx, &family)?;
    let growth = match fit.beta_hat() {
        Some(beta) => Some(growth_check(&ctx, &family, beta, config.eps0, config.tol_growth)?),
        None => None,
    };
    match (&fit.beta_hat(), &growth) {
        (Some(beta), Some(g)) if g.pass => {
            println!("sufficient margin: beta_hat = {beta:.6} over {} members", g.neighborhood_members.len())
        }
        (Some(beta), _) => println!("sufficient margin: beta_hat = {beta:.6} but growth check failed"),
        _ => println!("sufficient margin: not established"),
    }
    write_json(
        &layout.path("sufficient.json"),
        &SufficientArtifact { fit, growth },
    )?;
    write_meta(&layout, config, "sufficient", None)?;
    Ok(0)
}

pub fn run_chatter(config: &RunConfig) -> Result<i32> {
    let layout = Layout::new(config);
    layout.ensure()?;
    let instance = load(config)?;
    let probe = instance.default_probe();
    let report = chattering_convergence(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &probe,
        config.chatter_alpha,
        &config.eps_list,
        &instance.grid,
    )?;
    write_json(&layout.path("convergence/chatter.json"), &report)?;
    write_meta(&layout, config, "chatter", None)?;
    for row in &report.rows {
        match row.order {
            Some(order) => println!(
                "eps {:.6}: state error {:.6e}, order {order:.3}",
                row.epsilon, row.state_error
            ),
            None => println!("eps {:.6}: state error {:.6e}", row.epsilon, row.state_error),
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct QuotientsArtifact {
    first_order: optcond::pmp::OracleReport,
    second_order: optcond::pmp::OracleReport,
    bounds: optcond::relaxation::BoundReport,
}

pub fn run_quotients(config: &RunConfig) -> Result<i32> {
    let layout = Layout::new(config);
    layout.ensure()?;
    let instance = load(config)?;
    let solved = instance.solve(config)?;
    let probe = instance.default_probe();
    let first_order = optcond::pmp::first_quotient_oracle(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &probe,
        &solved.base.x,
        &solved.adjoints.psi,
        &config.alpha_list,
        &instance.grid,
    )?;
    let ctx = SocKernelContext::new(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &solved.base,
        &solved.adjoints,
        &instance.grid,
    )?;
    let second_order = second_quotient_oracle(&ctx, &probe, &config.alpha_list)?;
    let bounds = fit_quotient_bounds(
        &instance.inst.problem,
        &instance.inst.domain,
        &instance.inst.candidate,
        &probe,
        &config.alpha_list,
        &instance.grid,
    )?;
    println!(
        "first-order quotient: target {:.6e}, converged = {}",
        first_order.target, first_order.converged
    );
    println!(
        "second-order quotient: target {:.6e}, converged = {}",
        second_order.target, second_order.converged
    );
    println!(
        "bound constants: c1 max {:.6e} (spread {:.3}), c2 max {:.6e} (spread {:.3})",
        bounds.c1_max, bounds.c1_spread, bounds.c2_max, bounds.c2_spread
    );
    write_json(
        &layout.path("convergence/quotients.json"),
        &QuotientsArtifact {
            first_order,
            second_order,
            bounds,
        },
    )?;
    write_meta(&layout, config, "quotients", None)?;
    Ok(0)
}
