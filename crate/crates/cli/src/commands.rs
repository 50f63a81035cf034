use std::path::Path;

use logcap::assumptions::{
    audit, centered_kernel_check, fourth_moment_trend, montecarlo_gap_tail, AuditConfig, TestFunction, Verdicts,
};
use logcap::equilibrium::{discretize, equilibrium_density_profile, refine_estimate, solve_equilibrium};
use logcap::kernel::{DensitySpec, Interval};
use logcap::redistribution::{
    clip_equilibrium, density_measure, nested_driver, redistribution_step, NestedRun, RedistributionConfig, StepResult,
};
use logcap::report::{write_csv, write_toml};
use logcap::selftest;
use logcap::setgen::{sample_centers_iid, LengthSchedule};
use logcap::transition::{sweep_alpha, sweep_table, SweepConfig, Verdict, SWEEP_FOOTER};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(logcap::Error),
    /// Ran to completion but some criteria failed.
    Criteria {
        failed: Vec<u32>,
    },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Core(e) => e.fmt(f),
            CliError::Criteria { failed } => write!(f, "criteria failed: {failed:?}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<logcap::Error> for CliError {
    fn from(e: logcap::Error) -> Self {
        CliError::Core(e)
    }
}

/// Structured record written to `error.toml`.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn record(&self, command: &str) -> ErrorRecord {
        let (kind, field) = match self {
            CliError::Config(e) => ("config".to_string(), Some(e.field.clone())),
            CliError::Core(e) => {
                let debug = format!("{e:?}");
                let kind = debug.split(['{', '(', ' ']).next().unwrap_or("Error").to_string();
                let field = match e {
                    logcap::Error::InvalidArgument { name, .. } => Some(name.to_string()),
                    _ => None,
                };
                (kind, field)
            }
            CliError::Criteria { .. } => ("criteria".to_string(), None),
        };
        ErrorRecord {
            command: command.to_string(),
            kind,
            field,
            message: self.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Criteria { .. } => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct CapacityRow {
    panels: usize,
    energy: f64,
    capacity: f64,
}

#[derive(Serialize)]
struct ProfileRow {
    x: f64,
    density: f64,
}

#[derive(Serialize)]
struct CapacitySummary {
    intervals: usize,
    panels: usize,
    energy: f64,
    capacity: f64,
    potential_spread: f64,
    projected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extrapolated_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extrapolated_capacity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<f64>,
}

pub fn capacity(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let set = cfg
        .intervals
        .iter()
        .map(|&[lo, hi]| Interval::from_bounds(lo, hi))
        .collect::<logcap::Result<Vec<_>>>()?;
    let (best, rows, refined) = if cfg.panels.len() == 1 {
        let est = solve_equilibrium(&discretize(&set, cfg.panels[0])?)?;
        let row = CapacityRow {
            panels: est.panel_count,
            energy: est.energy,
            capacity: est.capacity,
        };
        (est, vec![row], None)
    } else {
        let r = refine_estimate(&set, &cfg.panels)?;
        let rows = r
            .budgets
            .iter()
            .zip(&r.energies)
            .map(|(&panels, &energy)| CapacityRow {
                panels,
                energy,
                capacity: (-energy).exp(),
            })
            .collect();
        (r.best.clone(), rows, Some(r))
    };
    let profile: Vec<ProfileRow> = equilibrium_density_profile(&best)?
        .into_iter()
        .map(|(x, density)| ProfileRow { x, density })
        .collect();
    write_csv(out.join("capacity.csv"), &rows)?;
    write_csv(out.join("profile.csv"), &profile)?;
    let summary = CapacitySummary {
        intervals: set.len(),
        panels: best.panel_count,
        energy: best.energy,
        capacity: best.capacity,
        potential_spread: best.potential_spread(),
        projected: best.projected,
        error_estimate: best.error_estimate,
        extrapolated_energy: refined.as_ref().map(|r| r.extrapolated_energy),
        extrapolated_capacity: refined.as_ref().map(|r| (-r.extrapolated_energy).exp()),
        order: refined.as_ref().and_then(|r| r.order),
    };
    write_toml(out.join("summary.toml"), &summary)?;
    println!(
        "capacity {:.9} (energy {:.9}, {} panels)",
        best.capacity, best.energy, best.panel_count
    );
    Ok(())
}

#[derive(Serialize)]
struct AuditSummary {
    n: usize,
    q: usize,
    seed: u64,
    verdicts: Verdicts,
    a1_max_deviation: f64,
    a1_final_deviation: f64,
    a1_threshold: f64,
    a1_trend_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    a2_passing_delta: Option<f64>,
    a2_worst: Vec<f64>,
    a3_max_ratio: f64,
    a3_ln_max_ratio: f64,
    a3_worst_pair: (usize, usize),
}

pub fn audit_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let table = cfg.table()?;
    let schedule = LengthSchedule::new(cfg.lambda, cfg.alpha)?;
    let mut centers = sample_centers_iid(&table, cfg.seed, 0);
    let acfg = AuditConfig {
        n: cfg.n,
        q: cfg.q_override(),
        a1_scale: cfg.a1_scale,
        a2_epsilon: cfg.a2_epsilon,
        deltas: cfg.deltas.clone(),
        a3_epsilon: cfg.a3_epsilon,
        stop_at_pass: true,
    };
    let r = audit(&schedule, &mut centers, &TestFunction::defaults(&table), &acfg)?;
    write_csv(out.join("a1_trace.csv"), &r.a1.trace)?;
    write_csv(out.join("a2_cells.csv"), &r.a2.cells)?;
    let summary = AuditSummary {
        n: r.n,
        q: r.q,
        seed: cfg.seed,
        verdicts: r.verdicts.clone(),
        a1_max_deviation: r.a1.max_deviation,
        a1_final_deviation: r.a1.final_deviation,
        a1_threshold: r.a1.threshold,
        a1_trend_ok: r.a1.trend_ok,
        a2_passing_delta: r.a2.passing_delta,
        a2_worst: r.a2.worst.clone(),
        a3_max_ratio: r.a3.max_ratio,
        a3_ln_max_ratio: r.a3.ln_max_ratio,
        a3_worst_pair: r.a3.worst_pair,
    };
    write_toml(out.join("summary.toml"), &summary)?;
    let v = &r.verdicts;
    println!("audit n={} q={}: A1 {} A2 {} A3 {}", r.n, r.q, v.a1, v.a2, v.a3);
    Ok(())
}

#[derive(Serialize)]
struct TailRow {
    n: usize,
    q: usize,
    trials: usize,
    violation_count: usize,
    frequency: f64,
    bound_value: f64,
    vacuous: bool,
}

#[derive(Serialize)]
struct MonteCarloSummary {
    gap_tail: TailRow,
    kernel_c: f64,
    kernel_interpolation_error: f64,
    means_within_three_stderr: bool,
    fourth_moment_non_increasing: bool,
    fourth_moment_fitted_constant: f64,
}

pub fn montecarlo(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let table = cfg.table()?;
    let schedule = LengthSchedule::new(cfg.lambda, cfg.alpha)?;
    let tail = montecarlo_gap_tail(&schedule, &table, cfg.mc_n, cfg.mc_epsilon, cfg.trials, cfg.seed)?;
    let means = centered_kernel_check(
        &table,
        cfg.kernel_delta,
        &cfg.kernel_points,
        cfg.kernel_trials,
        cfg.seed.wrapping_add(1),
    )?;
    let trend = fourth_moment_trend(
        &table,
        cfg.kernel_delta,
        &cfg.fourth_ns,
        cfg.fourth_q,
        cfg.fourth_epsilon,
        cfg.fourth_trials,
        cfg.seed.wrapping_add(2),
    )?;
    let row = |s: &logcap::assumptions::TailStats| TailRow {
        n: s.n,
        q: s.q,
        trials: s.trials,
        violation_count: s.violation_count,
        frequency: s.frequency,
        bound_value: s.bound_value,
        vacuous: s.vacuous,
    };
    write_csv(out.join("conditional_means.csv"), &means)?;
    write_csv(
        out.join("fourth_moment.csv"),
        &trend.stats.iter().map(row).collect::<Vec<_>>(),
    )?;
    let summary = MonteCarloSummary {
        gap_tail: row(&tail),
        kernel_c: trend.c,
        kernel_interpolation_error: trend.interpolation_error,
        means_within_three_stderr: means.iter().all(|m| m.within_three_stderr),
        fourth_moment_non_increasing: trend.non_increasing,
        fourth_moment_fitted_constant: trend.fitted_constant,
    };
    write_toml(out.join("summary.toml"), &summary)?;
    println!(
        "gap tail frequency {} (bound {:.4e}); fourth-moment frequencies non-increasing: {}",
        tail.frequency, tail.bound_value, trend.non_increasing
    );
    Ok(())
}

#[derive(Serialize)]
struct StageRow {
    stage: usize,
    level: usize,
    q: usize,
    energy_before: f64,
    energy_after: f64,
    increment: f64,
    budget: f64,
    occupancy: f64,
    discarded_straddlers: usize,
    discarded_overlaps: usize,
    contained: bool,
    atoms: usize,
    mass: f64,
}

fn stage_row(stage: usize, s: &StepResult) -> StageRow {
    StageRow {
        stage,
        level: s.level,
        q: s.q,
        energy_before: s.energy_before,
        energy_after: s.energy_after,
        increment: s.increment(),
        budget: s.budget,
        occupancy: s.occupancy,
        discarded_straddlers: s.discarded_straddlers,
        discarded_overlaps: s.discarded_overlaps,
        contained: s.contained,
        atoms: s.nu_prime.atoms().len(),
        mass: s.nu_prime.total_mass(),
    }
}

#[derive(Serialize)]
struct RedistributeSummary {
    mode: &'static str,
    eps: f64,
    delta_clip: f64,
    initial_energy: f64,
    final_energy: f64,
    stages_completed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger_holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stopped: Option<String>,
}

pub fn redistribute(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let table = cfg.table()?;
    let mut rcfg = RedistributionConfig::new(
        LengthSchedule::new(cfg.lambda, cfg.alpha)?,
        sample_centers_iid(&table, cfg.seed, 0),
        DensitySpec::Constant(1.0),
    )?
    .with_m_min(cfg.m_min)?
    .with_max_centers(cfg.max_centers);
    rcfg.tol = cfg.tol;
    if let Some(q) = cfg.q_override() {
        rcfg = rcfg.with_q(q)?;
    }
    if cfg.stages == 0 {
        let nu = density_measure(&clip_equilibrium(cfg.delta_clip)?)?;
        let step = redistribution_step(&nu, &rcfg, cfg.eps, cfg.m_min)?;
        write_csv(out.join("stages.csv"), &[stage_row(1, &step)])?;
        let summary = RedistributeSummary {
            mode: "single",
            eps: cfg.eps,
            delta_clip: cfg.delta_clip,
            initial_energy: step.energy_before,
            final_energy: step.energy_after,
            stages_completed: 1,
            target: None,
            ledger_holds: None,
            stopped: None,
        };
        write_toml(out.join("summary.toml"), &summary)?;
        println!(
            "step at n = {}: I(nu) {:.6} -> I(nu') {:.6}",
            step.level, step.energy_before, step.energy_after
        );
        return Ok(());
    }
    let run: NestedRun = nested_driver(&rcfg, cfg.eps, cfg.stages)?;
    let rows: Vec<StageRow> = run.steps.iter().enumerate().map(|(i, s)| stage_row(i + 1, s)).collect();
    write_csv(out.join("stages.csv"), &rows)?;
    let summary = RedistributeSummary {
        mode: "nested",
        eps: run.eps,
        delta_clip: run.delta_clip,
        initial_energy: run.initial_energy,
        final_energy: run.final_energy(),
        stages_completed: run.steps.len(),
        target: Some(run.target()),
        ledger_holds: Some(run.ledger_holds()),
        stopped: run.stopped.as_ref().map(|e| e.to_string()),
    };
    write_toml(out.join("summary.toml"), &summary)?;
    println!(
        "{} of {} stages: I(nu_0) {:.6} -> {:.6} (target {:.6})",
        run.steps.len(),
        cfg.stages,
        run.initial_energy,
        run.final_energy(),
        run.target()
    );
    match run.stopped {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct RegimeRow {
    alpha: f64,
    lambda: f64,
    verdict: Verdict,
    /// Cover sum from `k = 1`; convergent regimes only.
    h0_volume_bound: Option<f64>,
    h0_tail_last_m: Option<f64>,
    energy_last_m: Option<f64>,
    capacity_lower_bound_last_m: Option<f64>,
    union_capacity_last_m: Option<f64>,
    errors: usize,
}

#[derive(Serialize)]
struct SweepSummary {
    note: &'static str,
    regimes: Vec<RegimeRow>,
    errors: Vec<String>,
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let table = cfg.table()?;
    let mut scfg = SweepConfig::new(cfg.lambda, sample_centers_iid(&table, cfg.seed, 0));
    scfg.q_override = cfg.q_override();
    scfg.tol = cfg.tol;
    scfg.capacity_max_m = cfg.capacity_max_m;
    let reports = sweep_alpha(&scfg, &cfg.alphas, &cfg.m_grid)?;
    let last_m = cfg.m_grid[cfg.m_grid.len() - 1];
    let regimes: Vec<RegimeRow> = reports
        .iter()
        .map(|r| RegimeRow {
            alpha: r.alpha,
            lambda: r.lambda,
            verdict: r.series_verdict,
            h0_volume_bound: r.tail_sums.first().map(|b| b.value),
            h0_tail_last_m: r.tail_sums.last().map(|b| b.value),
            energy_last_m: r.lower_bounds.last().map(|b| b.energy),
            capacity_lower_bound_last_m: r.lower_bounds.last().map(|b| b.bound),
            union_capacity_last_m: r.capacity_estimates.last().map(|c| c.1),
            errors: r.errors.len(),
        })
        .collect();
    write_csv(out.join("regimes.csv"), &regimes)?;
    write_csv(out.join("sweep.csv"), &sweep_table(&reports))?;
    for r in &regimes {
        match (r.h0_tail_last_m, r.capacity_lower_bound_last_m) {
            (Some(t), _) => println!(
                "alpha {:<5} {}: h0 tail at m = {} is {t:.4e}",
                r.alpha, r.verdict, last_m
            ),
            (None, Some(b)) => println!(
                "alpha {:<5} {}: exp(-I(mu^m)) at m = {} is {b:.4}",
                r.alpha, r.verdict, last_m
            ),
            (None, None) => println!("alpha {:<5} {}: no bounds ({} errors)", r.alpha, r.verdict, r.errors),
        }
    }
    println!("{SWEEP_FOOTER}");
    let summary = SweepSummary {
        note: SWEEP_FOOTER,
        regimes,
        errors: reports.iter().flat_map(|r| r.errors.iter().cloned()).collect(),
    };
    write_toml(out.join("summary.toml"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct SelftestSummary {
    total: usize,
    passed: usize,
    failed: Vec<u32>,
}

pub fn selftest_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcomes = selftest::run(&cfg.criteria);
    for o in &outcomes {
        println!("{o}");
    }
    write_csv(out.join("selftest.csv"), &outcomes)?;
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let summary = SelftestSummary {
        total: outcomes.len(),
        passed: outcomes.len() - failed.len(),
        failed: failed.clone(),
    };
    write_toml(out.join("summary.toml"), &summary)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Criteria { failed })
    }
}
