//! Command-line front end. Every flag can also be set through an
//! environment variable named `ROBOTUNE_<FLAG>`, e.g. `ROBOTUNE_SEED=7`.

pub mod commands;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub use commands::{
    cmd_cross_eval, cmd_oracle, cmd_replay, cmd_report, cmd_sweep, cmd_timeline, cmd_tune,
    CrossMatrix, KnobRange, ReplayReport, SummaryRow, SweepRow, TuneMode, TuneReport,
};

use crate::config::Config;
use crate::guard::GuardError;
use crate::profiler::ProfileError;
use crate::sim::SimError;
use crate::tuner::{TunerError, DEFAULT_BUDGET};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("no run artifacts under {0}")]
    MissingArtifacts(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) | CliError::MissingArtifacts(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<TunerError> for CliError {
    fn from(e: TunerError) -> Self {
        match e {
            TunerError::BudgetTooSmall { .. } | TunerError::SpaceTooLarge(_) => {
                CliError::Validation(e.to_string())
            }
            TunerError::Simulation(s) => s.into(),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<GuardError> for CliError {
    fn from(e: GuardError) -> Self {
        match e {
            GuardError::Tuner(t) => t.into(),
            GuardError::Simulation(s) => s.into(),
            GuardError::UnknownEnvironment(_) => CliError::Validation(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Tune,
    CgroupsOnly,
    RandomK,
    Oracle,
}

#[derive(Debug, Parser)]
#[command(
    name = "robotune",
    version,
    about = "Tune and monitor simulated robot stacks"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Scenario file; repeat for cross-eval.
    #[arg(long, global = true, env = "ROBOTUNE_SCENARIO", value_delimiter = ',')]
    pub scenario: Vec<PathBuf>,
    /// Seeds, comma-separated; each seed writes to its own subdirectory.
    #[arg(
        long,
        global = true,
        env = "ROBOTUNE_SEED",
        value_delimiter = ',',
        default_value = "42"
    )]
    pub seed: Vec<u64>,
    /// Tuner iterations; defaults to the scenario's.
    #[arg(long, global = true, env = "ROBOTUNE_BUDGET")]
    pub budget: Option<usize>,
    #[arg(
        long,
        global = true,
        env = "ROBOTUNE_MODE",
        value_enum,
        default_value = "tune"
    )]
    pub mode: Mode,
    /// Output directory.
    #[arg(long, global = true, env = "ROBOTUNE_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for independent simulations; 0 uses every core.
    #[arg(long, global = true, env = "ROBOTUNE_PARALLEL", default_value_t = 0)]
    pub parallel: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune a scenario and compare against the default config.
    Tune {
        /// Random configs evaluated alongside (and by random-k mode).
        #[arg(long, env = "ROBOTUNE_K", default_value_t = 3)]
        k: usize,
        /// Free knob for oracle mode, as name=min:max:step.
        #[arg(long = "free")]
        free: Vec<KnobRange>,
    },
    /// Evaluate each scenario's tuned config on every scenario.
    CrossEval {
        /// Config files in scenario order; tuned from scratch when absent.
        #[arg(long = "config", value_delimiter = ',')]
        configs: Vec<PathBuf>,
    },
    /// Exhaustively evaluate a discretized space.
    Oracle {
        /// Free knob as name=min:max:step; all others stay at default.
        #[arg(long = "free")]
        free: Vec<KnobRange>,
    },
    /// Re-evaluate a stored config or trial record.
    Replay {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a timeline scenario under the runtime guard.
    Timeline {
        /// Config library file, read and updated in place.
        #[arg(long, env = "ROBOTUNE_LIBRARY")]
        library: Option<PathBuf>,
    },
    /// Sweep one node's quota and record its threads and latency.
    Sweep {
        #[arg(long)]
        node: String,
        #[arg(long, value_delimiter = ',', default_value = "4,1,0.5")]
        quotas: Vec<f64>,
    },
    /// Merge run artifacts under --out into plot-ready CSVs.
    Report,
}

/// What a run was asked to do, written next to its artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub scenarios: Vec<PathBuf>,
    pub mode: Mode,
    pub budget: Option<usize>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl ExperimentManifest {
    pub fn validate(&self, needs_scenario: bool) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one --seed is required".into()));
        }
        if needs_scenario && self.scenarios.is_empty() {
            return Err(CliError::Usage("--scenario is required".into()));
        }
        for p in &self.scenarios {
            if !p.exists() {
                return Err(CliError::Validation(format!(
                    "{} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

fn seed_dir(out: &Path, seed: u64, seeds: &[u64]) -> PathBuf {
    if seeds.len() == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("seed-{seed}"))
    }
}

fn single_scenario(g: &GlobalArgs) -> Result<&Path, CliError> {
    match g.scenario.as_slice() {
        [p] => Ok(p),
        _ => Err(CliError::Usage("exactly one --scenario is required".into())),
    }
}

fn read_config(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let name = match &cli.command {
        Command::Tune { .. } => "tune",
        Command::CrossEval { .. } => "cross-eval",
        Command::Oracle { .. } => "oracle",
        Command::Replay { .. } => "replay",
        Command::Timeline { .. } => "timeline",
        Command::Sweep { .. } => "sweep",
        Command::Report => "report",
    };
    let manifest = ExperimentManifest {
        command: name.to_string(),
        scenarios: g.scenario.clone(),
        mode: g.mode,
        budget: g.budget,
        seeds: g.seed.clone(),
        out: g.out.clone(),
    };
    manifest.validate(!matches!(cli.command, Command::Report))?;
    if let Command::Report = cli.command {
        for p in cmd_report(&g.out)? {
            println!("{}", p.display());
        }
        return Ok(());
    }
    std::fs::create_dir_all(&g.out)?;
    std::fs::write(
        g.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;

    for &seed in &g.seed {
        let out = seed_dir(&g.out, seed, &g.seed);
        match &cli.command {
            Command::Tune { k, free } => {
                let sc = commands::load(single_scenario(g)?)?;
                let budget = g.budget.unwrap_or(sc.profiling.tune_budget);
                if g.mode == Mode::Oracle {
                    let run = cmd_oracle(&sc, free, seed, g.parallel, Some(&out))?;
                    report_outcome(seed, &run.outcome);
                    continue;
                }
                let mode = match g.mode {
                    Mode::Tune => TuneMode::Tune,
                    Mode::CgroupsOnly => TuneMode::CgroupsOnly,
                    Mode::RandomK => TuneMode::RandomK(*k),
                    Mode::Oracle => TuneMode::Oracle,
                };
                let r = cmd_tune(&sc, mode, budget, *k, seed, g.parallel, Some(&out))?;
                report_outcome(seed, &r.run.outcome);
                for row in &r.summary {
                    println!(
                        "  {:<14} satisfaction {:>6.2}%  objective {:.4}{}",
                        row.variant,
                        row.satisfaction_rate,
                        row.objective,
                        if row.found { "" } else { "  (UNSAT)" }
                    );
                }
            }
            Command::CrossEval { configs } => {
                let scenarios = g
                    .scenario
                    .iter()
                    .map(|p| commands::load(p))
                    .collect::<Result<Vec<_>, _>>()?;
                let configs = if configs.is_empty() {
                    None
                } else if configs.len() != scenarios.len() {
                    return Err(CliError::Usage("give one --config per --scenario".into()));
                } else {
                    Some(
                        configs
                            .iter()
                            .map(|p| read_config(p))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                };
                let budget = g.budget.unwrap_or(DEFAULT_BUDGET);
                let m = cmd_cross_eval(&scenarios, configs, budget, seed, g.parallel, Some(&out))?;
                for (i, row) in m.cells.iter().enumerate() {
                    let cells: Vec<String> = row
                        .iter()
                        .map(|r| format!("{:>6.2}%/{:.3}", r.satisfaction_rate, r.objective))
                        .collect();
                    println!("{:<16} {}", m.names[i], cells.join("  "));
                }
            }
            Command::Oracle { free } => {
                let sc = commands::load(single_scenario(g)?)?;
                let run = cmd_oracle(&sc, free, seed, g.parallel, Some(&out))?;
                report_outcome(seed, &run.outcome);
            }
            Command::Replay { config } => {
                let sc = commands::load(single_scenario(g)?)?;
                let r = cmd_replay(&sc, config, seed, Some(&out))?;
                println!(
                    "satisfaction {:.2}%  objective {:.4}{}",
                    r.result.satisfaction_rate,
                    r.result.objective,
                    match r.matches {
                        Some(true) => "  (matches stored trial)",
                        Some(false) => "  (DIFFERS from stored trial)",
                        None => "",
                    }
                );
                if r.matches == Some(false) {
                    return Err(CliError::Runtime(
                        "replay did not reproduce the stored trial".into(),
                    ));
                }
            }
            Command::Timeline { library } => {
                let sc = commands::load(single_scenario(g)?)?;
                let report = cmd_timeline(
                    &sc,
                    seed,
                    g.budget,
                    g.parallel,
                    library.as_deref(),
                    Some(&out),
                )?;
                report.write_csv(std::io::stdout())?;
            }
            Command::Sweep { node, quotas } => {
                let sc = commands::load(single_scenario(g)?)?;
                for r in cmd_sweep(&sc, node, quotas, seed, Some(&out))? {
                    println!(
                        "quota {:>5}  threads mean {:.2} max {}  latency {:.3} s",
                        r.quota, r.mean_threads, r.max_threads, r.mean_latency_s
                    );
                }
            }
            Command::Report => unreachable!("handled above"),
        }
    }
    Ok(())
}

fn report_outcome(seed: u64, outcome: &crate::tuner::TunerOutcome) {
    match outcome.best_objective() {
        Some(v) => println!("seed {seed}: best objective {v:.4}"),
        None => println!("seed {seed}: UNSAT"),
    }
}

/// Parses `args` and runs them, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
