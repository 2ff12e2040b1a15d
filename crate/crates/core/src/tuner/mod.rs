//! Constrained Bayesian optimization over a configuration space, plus the
//! exhaustive and random baselines.
//!
//! Every trial simulates the stack under one configuration for a short
//! span and scores it with the profiler. Trial seeds are derived from the
//! run seed, a label and the iteration index, so results do not depend on
//! how trials are scheduled across threads.

mod gp;
mod surrogate;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gp::GaussianProcess;
pub use surrogate::{fit_surrogate, halton_point, suggest_next, Grid, SurrogateModel};

use crate::config::{Config, Provenance};
use crate::profiler::{
    compute_metrics_range, evaluate_series, EvaluationResult, ProfileError, DEFAULT_WINDOW_SECS,
};
use crate::sim::{run_simulation, secs_to_micros, SimError, SimulationSettings};
use crate::stack::{ConfigSpace, PerformanceSpec, StackModel};

/// Largest space the exhaustive oracle accepts.
pub const ORACLE_LIMIT: u128 = 10_000;
pub const DEFAULT_BUDGET: usize = 60;
pub const DEFAULT_TRIAL_SECS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TunerError {
    #[error("history has fewer than two distinct configs")]
    DegenerateHistory,
    #[error("every config in the space has been tried")]
    SpaceExhausted,
    #[error("space has {0} points, more than the oracle limit")]
    SpaceTooLarge(u128),
    #[error("budget {budget} is below the {init} initial samples")]
    BudgetTooSmall { budget: usize, init: usize },
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub iteration: usize,
    pub config: Config,
    /// Mean metric value per app; None where undefined.
    pub values: BTreeMap<String, Option<f64>>,
    pub satisfaction_rate: f64,
    pub feasible: bool,
    pub objective: f64,
    pub core_tail: BTreeMap<String, f64>,
    pub seed: u64,
    /// Wall-clock evaluation time; not persisted so reruns write identical
    /// histories.
    #[serde(skip)]
    pub wall_ms: f64,
}

impl TrialRecord {
    pub fn from_result(
        iteration: usize,
        config: Config,
        seed: u64,
        r: EvaluationResult,
        wall_ms: f64,
    ) -> Self {
        Self {
            iteration,
            config,
            values: r
                .means
                .iter()
                .map(|(k, v)| (k.clone(), v.is_finite().then_some(*v)))
                .collect(),
            satisfaction_rate: r.satisfaction_rate,
            feasible: r.feasible,
            objective: r.objective,
            core_tail: r.core_tail,
            seed,
            wall_ms,
        }
    }

    /// Objective for ranking: minus infinity when infeasible.
    pub fn ranked_objective(&self) -> f64 {
        if self.feasible {
            self.objective
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TunerOutcome {
    Best { config: Config, trial: TrialRecord },
    Unsat { trials: usize },
}

impl TunerOutcome {
    /// Best feasible trial of `history`. Ties go to the larger smallest
    /// core tail ratio, then to the earliest trial.
    pub fn from_history(history: &[TrialRecord], provenance: Provenance) -> Self {
        let margin = |t: &TrialRecord| t.core_tail.values().copied().fold(f64::INFINITY, f64::min);
        let best = history.iter().filter(|t| t.feasible).fold(
            None,
            |b: Option<&TrialRecord>, t| match b {
                Some(b) if b.objective > t.objective => Some(b),
                Some(b) if b.objective == t.objective && margin(b) >= margin(t) => Some(b),
                _ => Some(t),
            },
        );
        match best {
            Some(t) => TunerOutcome::Best {
                config: t.config.clone().with_provenance(provenance),
                trial: t.clone(),
            },
            None => TunerOutcome::Unsat {
                trials: history.len(),
            },
        }
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, TunerOutcome::Unsat { .. })
    }

    pub fn best_objective(&self) -> Option<f64> {
        match self {
            TunerOutcome::Best { trial, .. } => Some(trial.objective),
            TunerOutcome::Unsat { .. } => None,
        }
    }
}

/// A tuner run: the outcome and every trial in iteration order.
#[derive(Debug, Clone)]
pub struct TuningRun {
    pub outcome: TunerOutcome,
    pub history: Vec<TrialRecord>,
}

/// What is being tuned and how trials are simulated.
#[derive(Debug, Clone)]
pub struct TuningProblem<'a> {
    pub stack: &'a StackModel,
    pub spec: &'a PerformanceSpec,
    pub space: &'a ConfigSpace,
    /// Machine budget and scheduler settings; duration and seed are set per
    /// trial.
    pub settings: SimulationSettings,
    pub trial_secs: f64,
    /// Simulated seconds before each measurement span, so trials see the
    /// steady state rather than empty queues.
    pub warmup_secs: f64,
}

impl TuningProblem<'_> {
    /// Simulates `config` with `seed` for the warm-up plus `secs` and
    /// evaluates the last `secs`.
    pub fn evaluate(
        &self,
        config: &Config,
        seed: u64,
        secs: f64,
    ) -> Result<EvaluationResult, TunerError> {
        let settings = self
            .settings
            .with_duration(self.warmup_secs + secs)
            .with_seed(seed);
        let trace = run_simulation(self.stack, config, &settings)?;
        let series = compute_metrics_range(
            &trace,
            self.spec,
            secs_to_micros(self.warmup_secs),
            trace.duration,
            DEFAULT_WINDOW_SECS,
        )?;
        Ok(evaluate_series(&series, self.spec)?)
    }

    fn trial(
        &self,
        iteration: usize,
        config: Config,
        seed: u64,
    ) -> Result<TrialRecord, TunerError> {
        let start = Instant::now();
        let r = self.evaluate(&config, seed, self.trial_secs)?;
        Ok(TrialRecord::from_result(
            iteration,
            config,
            seed,
            r,
            start.elapsed().as_secs_f64() * 1e3,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct TunerOptions {
    pub budget: usize,
    pub seed: u64,
    /// Worker threads for independent trials; 0 uses every core.
    pub parallel: usize,
    /// Overrides the default `max(8, 2 x knobs)` initial design size.
    pub init_samples: Option<usize>,
}

impl TunerOptions {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            parallel: 0,
            init_samples: None,
        }
    }
}

/// Mixes a run seed with a label and an index (FNV-1a then SplitMix64).
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn init_samples(space: &ConfigSpace) -> usize {
    8.max(2 * space.dims())
}

fn thread_pool(parallel: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .expect("thread pool")
}

/// Quasi-random initial design snapped to the grid, without repeats.
fn initial_design(space: &ConfigSpace, n: usize, seed: u64) -> Vec<Config> {
    let grid = Grid::new(space);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
    let shift: Vec<f64> = (0..space.dims()).map(|_| rng.gen()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let limit = grid.size().min(n as u128) as usize;
    let mut k = 1u64;
    while out.len() < limit && k < 100_000 {
        let idx = grid.snap(&halton_point(k, space.dims(), &shift));
        k += 1;
        if seen.insert(idx.clone()) {
            out.push(grid.config(space, &idx, Provenance::Tuned));
        }
    }
    out
}

/// Runs constrained Bayesian optimization. `sink` sees each trial as soon
/// as it is recorded, in iteration order.
pub fn optimize(
    problem: &TuningProblem,
    options: &TunerOptions,
    sink: &mut dyn FnMut(&TrialRecord),
) -> Result<TuningRun, TunerError> {
    let space = problem.space;
    let init = options.init_samples.unwrap_or_else(|| init_samples(space));
    if options.budget < init {
        return Err(TunerError::BudgetTooSmall {
            budget: options.budget,
            init,
        });
    }
    let pool = thread_pool(options.parallel);
    let design = initial_design(space, init, options.seed);
    let mut history: Vec<TrialRecord> = pool.install(|| {
        design
            .into_par_iter()
            .enumerate()
            .map(|(i, c)| problem.trial(i, c, derive_seed(options.seed, "tune", i as u64)))
            .collect::<Result<_, _>>()
    })?;
    for t in &history {
        sink(t);
    }

    while history.len() < options.budget {
        let i = history.len();
        let next = match fit_surrogate(&history, space, problem.spec) {
            Ok(model) => suggest_next(
                &model,
                &history,
                space,
                derive_seed(options.seed, "suggest", i as u64),
            ),
            Err(TunerError::DegenerateHistory) => random_untried(
                space,
                &history,
                derive_seed(options.seed, "suggest", i as u64),
            ),
            Err(e) => return Err(e),
        };
        let config = match next {
            Ok(c) => c,
            Err(TunerError::SpaceExhausted) => break,
            Err(e) => return Err(e),
        };
        let t = problem.trial(i, config, derive_seed(options.seed, "tune", i as u64))?;
        sink(&t);
        history.push(t);
    }

    Ok(TuningRun {
        outcome: TunerOutcome::from_history(&history, Provenance::Tuned),
        history,
    })
}

fn random_untried(
    space: &ConfigSpace,
    history: &[TrialRecord],
    seed: u64,
) -> Result<Config, TunerError> {
    let grid = Grid::new(space);
    let tried: HashSet<Vec<usize>> = history
        .iter()
        .map(|t| grid.of_config(space, &t.config))
        .collect();
    if grid.size() <= tried.len() as u128 {
        return Err(TunerError::SpaceExhausted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let idx: Vec<usize> = grid.counts.iter().map(|&n| rng.gen_range(0..n)).collect();
        if !tried.contains(&idx) {
            return Ok(grid.config(space, &idx, Provenance::Tuned));
        }
    }
}

/// Evaluates every grid point of `problem.space` with the same seed.
pub fn brute_force_oracle(
    problem: &TuningProblem,
    seed: u64,
    parallel: usize,
) -> Result<TuningRun, TunerError> {
    let grid = Grid::new(problem.space);
    let size = grid.size();
    if size > ORACLE_LIMIT {
        return Err(TunerError::SpaceTooLarge(size));
    }
    let history: Vec<TrialRecord> = thread_pool(parallel).install(|| {
        (0..size as usize)
            .into_par_iter()
            .map(|k| {
                let c = grid.config(problem.space, &grid.nth(k as u128), Provenance::Tuned);
                problem.trial(k, c, seed)
            })
            .collect::<Result<_, _>>()
    })?;
    Ok(TuningRun {
        outcome: TunerOutcome::from_history(&history, Provenance::Tuned),
        history,
    })
}

/// Uniform independent draw of one level per knob.
pub fn random_config(space: &ConfigSpace, seed: u64) -> Config {
    let grid = Grid::new(space);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = grid.counts.iter().map(|&n| rng.gen_range(0..n)).collect();
    grid.config(space, &idx, Provenance::Random)
}

/// Writes trials as newline-delimited JSON.
pub fn write_history<W: Write>(mut out: W, history: &[TrialRecord]) -> std::io::Result<()> {
    for t in history {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_history(text: &str) -> Result<Vec<TrialRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Best-so-far objective among feasible trials after each iteration; None
/// until the first feasible trial.
pub fn progress(history: &[TrialRecord]) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    history
        .iter()
        .map(|t| {
            if t.feasible {
                best = Some(best.map_or(t.objective, |b| b.max(t.objective)));
            }
            best
        })
        .collect()
}
