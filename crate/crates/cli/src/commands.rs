//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use mopinn_core::adam::write_loss_csv;
use mopinn_core::driver::{experiment_data, run, solution_grid, RunOutput, Variant};
use mopinn_core::nsga3::write_front_csv;
use mopinn_core::problems::{default_oracle, Mode, ProblemKind};

use crate::aggregate::{aggregate, collect_reports, render, write_summary, REPORT_FILE, SUMMARY_FILE};
use crate::config::{BudgetOverrides, ExperimentConfig, Profile};
use crate::error::CliError;
use crate::output::{write_metrics_csv, write_solution_csv, ManifestEntry, RunDir};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

const RUN_ARTIFACTS: &[&str] = &[
    REPORT_FILE,
    METRICS_FILE,
    DIAGNOSTIC_FILE,
    "losses.csv",
    "solution.csv",
    "fronts.csv",
    "analysis.csv",
    "observations.csv",
    "collocation.csv",
];

#[derive(Debug, Parser)]
#[command(name = "mopinn", version, about = "Multi-objective PINN training with ensemble Kalman data assimilation")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write observations, collocation points and the reference solution cache.
    Generate(ExperimentArgs),
    /// Train one variant and write its report, metrics and plot grids.
    Run(ExperimentArgs),
    /// Run every combination of variants, noise levels and seeds.
    Sweep(SweepArgs),
    /// Aggregate the reports under a directory into a summary table.
    Report { dir: PathBuf },
}

#[derive(Debug, Default, Args)]
pub struct ExperimentArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// burgers or tfmdwe.
    #[arg(long)]
    pub problem: Option<ProblemKind>,
    /// forward (misspecified physics) or inverse (unknown coefficient).
    #[arg(long)]
    pub mode: Option<Mode>,
    /// adam, nsga3 or mopinnenkf.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Relative observation noise.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Master seed for data, initialization and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Budget preset.
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Use the exact physics in forward mode.
    #[arg(long)]
    pub perfect_model: bool,
    #[command(flatten)]
    pub budgets: BudgetOverrides,
}

impl ExperimentArgs {
    pub fn to_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        take!(problem, mode, variant, eta, seed, out, profile);
        c.perfect_model |= self.perfect_model;
        c.budgets = c.budgets.merged(&self.budgets);
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "adam,nsga3,mopinnenkf")]
    pub variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.8")]
    pub etas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => cmd_generate(&a.to_config()?).map(|m| {
            for f in m {
                println!("{}  {}", f.sha256, f.path);
            }
        }),
        Command::Run(a) => cmd_run(&a.to_config()?).map(|o| {
            let m = &o.report.metrics;
            println!("mse {:.6e}  mae {:.6e}", m.mse, m.mae);
            if let (Some(p), Some(e)) = (m.physics_estimate, m.physics_l1) {
                println!("physics {p:.6e}  |error| {e:.6e}");
            }
        }),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report { dir } => cmd_report(dir).map(|(rows, _)| print!("{rows}")),
    }
}

/// Writes the data a run consumes into `cfg.out`; returns the checksums.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<ManifestEntry>, CliError> {
    let (spec, budgets) = cfg.resolve()?;
    let mut dir = RunDir::create(&cfg.out, "generate")?;
    let (coll, obs) = experiment_data(&spec, cfg.eta, cfg.seed, &budgets)?;
    dir.write_text(CONFIG_FILE, &cfg.to_toml())?;
    dir.write("observations.csv", |p| obs.write_csv(p))?;
    dir.write("collocation.csv", |p| coll.write_csv(p))?;
    if spec.kind == ProblemKind::Burgers {
        dir.write("burgers_oracle.csv", |p| default_oracle().write_csv(p))?;
    }
    Ok(dir.finish()?.files)
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    status: &'static str,
    message: String,
    config: &'a ExperimentConfig,
}

fn write_run(dir: &mut RunDir, cfg: &ExperimentConfig, out: &RunOutput) -> Result<(), CliError> {
    let spec = cfg.resolve()?.0;
    dir.write("observations.csv", |p| out.observations.write_csv(p))?;
    dir.write("collocation.csv", |p| out.collocation.write_csv(p))?;
    dir.write_json(REPORT_FILE, &out.report)?;
    dir.write(METRICS_FILE, |p| write_metrics_csv(p, &[&out.report]))?;
    dir.write("losses.csv", |p| write_loss_csv(p, &out.losses))?;
    let grid = solution_grid(&spec, &out.network, &out.params, out.report.budgets.test_grid)?;
    dir.write("solution.csv", |p| write_solution_csv(p, &grid))?;
    if !out.fronts.is_empty() {
        dir.write("fronts.csv", |p| write_front_csv(p, &out.fronts))?;
    }
    if let Some(a) = &out.analysis {
        dir.write("analysis.csv", |p| a.write_csv(p))?;
    }
    Ok(())
}

/// Trains the configured variant and writes all artifacts into `cfg.out`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let (spec, budgets) = cfg.resolve()?;
    let mut dir = RunDir::create(&cfg.out, "run")?;
    dir.remove_stale(RUN_ARTIFACTS)?;
    dir.write_text(CONFIG_FILE, &cfg.to_toml())?;
    let result = run(&spec, cfg.variant, cfg.eta, cfg.seed, &budgets);
    match result {
        Ok(out) => {
            write_run(&mut dir, cfg, &out)?;
            dir.finish()?;
            Ok(out)
        }
        Err(e) => {
            let err = CliError::from(e);
            dir.write_json(DIAGNOSTIC_FILE, &Diagnostic { status: "failed", message: err.to_string(), config: cfg })?;
            dir.finish()?;
            Err(err)
        }
    }
}

/// Runs the grid sequentially, then aggregates. Failed runs are logged and
/// reflected in the exit status but do not stop the sweep.
pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base = args.base.to_config()?;
    let root = base.out.clone();
    let mut worst: Option<CliError> = None;
    for &variant in &args.variants {
        for &eta in &args.etas {
            for &seed in &args.seeds {
                let mut cfg = ExperimentConfig { variant, eta, seed, ..base.clone() };
                cfg.out = root.join(cfg.run_name());
                if variant == Variant::MoPinnEnkf && eta == 0.0 {
                    info!("skipping {}: assimilation needs observations", cfg.run_name());
                    continue;
                }
                info!("running {}", cfg.run_name());
                if let Err(e) = cmd_run(&cfg) {
                    warn!("{} failed: {e}", cfg.run_name());
                    if matches!(e, CliError::Config(_)) {
                        return Err(e);
                    }
                    if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                        worst = Some(e);
                    }
                }
            }
        }
    }
    let (table, _) = cmd_report(&root)?;
    print!("{table}");
    worst.map_or(Ok(()), Err)
}

/// Aggregates reports under `dir` into `summary.csv`; returns the rendered
/// table and the number of skipped files.
pub fn cmd_report(dir: &Path) -> Result<(String, usize), CliError> {
    let (found, skipped) = collect_reports(dir)?;
    if found.is_empty() {
        return Err(CliError::io(dir, format!("no {REPORT_FILE} found ({skipped} unreadable)")));
    }
    let reports: Vec<_> = found.into_iter().map(|(_, r)| r).collect();
    let rows = aggregate(&reports);
    let path = dir.join(SUMMARY_FILE);
    write_summary(&path, &rows)?;
    let mut table = render(&rows);
    table += &format!("{} reports aggregated, {skipped} skipped\n", reports.len());
    Ok((table, skipped))
}
