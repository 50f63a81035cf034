//! `logcap`: batch driver for capacity, audit, Monte Carlo, re-distribution,
//! sweep, and self-test runs.
//!
//! Each run writes into the output directory:
//! `resolved_config.toml` (every key, including the seed), `summary.toml`,
//! one or more CSV tables, and on failure `error.toml`. An `INCOMPLETE`
//! marker sits in the directory while a run is in progress or after it
//! failed.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "logcap", version, about = "Logarithmic capacity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat TOML configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; 0 keeps the rayon default.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Equilibrium measure and capacity of a finite union of intervals.
    Capacity,
    /// Distribution, log-spacing, and gap-control audits of the centers.
    Audit,
    /// Gap-control tail and centered-kernel Monte Carlo checks.
    Montecarlo,
    /// One re-distribution step, or the nested driver when `stages > 0`.
    Redistribute,
    /// Phase sweep over `alphas`.
    Sweep,
    /// Acceptance criteria listed in `criteria`.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Capacity => "capacity",
            Command::Audit => "audit",
            Command::Montecarlo => "montecarlo",
            Command::Redistribute => "redistribute",
            Command::Sweep => "sweep",
            Command::Selftest => "selftest",
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let name = cli.command.name();
    if !cfg.command.is_empty() && cfg.command != name {
        return Err(CliError::Config(config::ConfigError {
            field: "command".into(),
            reason: format!("config is for `{}`, invoked as `{name}`", cfg.command),
        }));
    }
    cfg.command = name.into();
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    logcap::report::write_toml(out.join("resolved_config.toml"), cfg)?;
    match cmd {
        Command::Capacity => commands::capacity(cfg, out),
        Command::Audit => commands::audit_cmd(cfg, out),
        Command::Montecarlo => commands::montecarlo(cfg, out),
        Command::Redistribute => commands::redistribute(cfg, out),
        Command::Sweep => commands::sweep(cfg, out),
        Command::Selftest => commands::selftest_cmd(cfg, out),
    }
}

fn fail(out: &Path, command: &str, err: &CliError) {
    eprintln!("error: {err}");
    let record = err.record(command);
    if let Err(e) = logcap::report::write_toml(out.join("error.toml"), &record) {
        eprintln!("could not write error record: {e}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    let resolved = resolve(&cli);
    let out = match &resolved {
        Ok(cfg) => PathBuf::from(&cfg.out),
        Err(_) => cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("cannot create {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    let marker = out.join("INCOMPLETE");
    if let Err(e) = std::fs::write(&marker, format!("{name} run in progress\n")) {
        eprintln!("cannot write to {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    let _ = std::fs::remove_file(out.join("error.toml"));
    let result = resolved.and_then(|cfg| execute(cli.command, &cfg, &out));
    match result {
        Ok(()) => {
            let _ = std::fs::remove_file(&marker);
            ExitCode::SUCCESS
        }
        Err(e @ CliError::Criteria { .. }) => {
            eprintln!("{e}");
            let _ = std::fs::remove_file(&marker);
            ExitCode::from(e.exit_code())
        }
        Err(e) => {
            fail(&out, name, &e);
            let _ = std::fs::write(&marker, format!("{name} failed: {e}\n"));
            ExitCode::from(e.exit_code())
        }
    }
}
