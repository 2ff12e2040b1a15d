//! Subcommand implementations. Each returns its results and, given an
//! output directory, writes them as CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::config::{Config, Provenance};
use crate::guard::{orchestrate, ConfigLibrary, DeploymentReport, GuardOptions};
use crate::profiler::{callback_latency, thread_stats, EvaluationResult};
use crate::sim::{run_simulation, EventKind};
use crate::stack::{build_config_space, load_scenario, ConfigSpace, Scenario};
use crate::tuner::{
    brute_force_oracle, derive_seed, optimize, progress, random_config, write_history, TrialRecord,
    TunerOptions, TunerOutcome, TuningProblem, TuningRun,
};

pub fn load(path: &Path) -> Result<Scenario, CliError> {
    load_scenario(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn space_of(sc: &Scenario) -> ConfigSpace {
    build_config_space(&sc.stack, sc.settings.budget_cores)
}

pub fn problem<'a>(sc: &'a Scenario, space: &'a ConfigSpace) -> TuningProblem<'a> {
    TuningProblem {
        stack: &sc.stack,
        spec: &sc.spec,
        space,
        settings: sc.settings.clone(),
        trial_secs: sc.profiling.trial_secs,
        warmup_secs: sc.profiling.warmup_secs,
    }
}

/// Evaluates `config` over the scenario's evaluation span.
pub fn evaluate(
    sc: &Scenario,
    space: &ConfigSpace,
    config: &Config,
    seed: u64,
) -> Result<EvaluationResult, CliError> {
    Ok(
        problem(sc, space).evaluate(
            config,
            derive_seed(seed, "eval", 0),
            sc.profiling.eval_secs,
        )?,
    )
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))
}

fn write_file(path: PathBuf, text: &str) -> Result<(), CliError> {
    fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_writer(path: PathBuf) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    Tune,
    CgroupsOnly,
    RandomK(usize),
    Oracle,
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub satisfaction_rate: f64,
    pub objective: f64,
    pub feasible: bool,
    /// False when the variant is a tuner that returned UNSAT.
    pub found: bool,
}

impl SummaryRow {
    fn of(variant: &str, r: &EvaluationResult) -> Self {
        Self {
            variant: variant.to_string(),
            satisfaction_rate: r.satisfaction_rate,
            objective: r.objective,
            feasible: r.feasible,
            found: true,
        }
    }

    fn unsat(variant: &str) -> Self {
        Self {
            variant: variant.to_string(),
            satisfaction_rate: 0.0,
            objective: 0.0,
            feasible: false,
            found: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct OutcomeDoc<'a> {
    status: &'static str,
    trials: usize,
    feasible_trials: usize,
    best_objective: Option<f64>,
    config: Option<&'a Config>,
}

fn write_run(out: &Path, run: &TuningRun) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_history(&mut buf, &run.history).expect("writing to memory");
    write_file(
        out.join("history.ndjson"),
        std::str::from_utf8(&buf).expect("utf-8"),
    )?;
    let (status, config) = match &run.outcome {
        TunerOutcome::Best { config, .. } => ("best", Some(config)),
        TunerOutcome::Unsat { .. } => ("unsat", None),
    };
    let doc = OutcomeDoc {
        status,
        trials: run.history.len(),
        feasible_trials: run.history.iter().filter(|t| t.feasible).count(),
        best_objective: run.outcome.best_objective(),
        config,
    };
    write_file(out.join("outcome.json"), &json(&doc))?;
    if let Some(c) = config {
        write_file(out.join("best_config.json"), &json(c))?;
    }
    let mut w = csv_writer(out.join("progress.csv"))?;
    w.write_record(["iteration", "objective", "feasible", "best_so_far"])?;
    for (t, b) in run.history.iter().zip(progress(&run.history)) {
        w.write_record([
            t.iteration.to_string(),
            t.objective.to_string(),
            t.feasible.to_string(),
            b.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    /// The run of the requested mode; for random-k, the sampled configs.
    pub run: TuningRun,
    pub summary: Vec<SummaryRow>,
}

fn tuned_row(
    sc: &Scenario,
    space: &ConfigSpace,
    variant: &str,
    run: &TuningRun,
    seed: u64,
) -> Result<SummaryRow, CliError> {
    match &run.outcome {
        TunerOutcome::Best { config, .. } => {
            Ok(SummaryRow::of(variant, &evaluate(sc, space, config, seed)?))
        }
        TunerOutcome::Unsat { .. } => Ok(SummaryRow::unsat(variant)),
    }
}

/// Runs one tuning experiment and compares it with the default config.
/// Mode `Tune` also compares with cgroups-only tuning and `random_k`
/// random configs.
pub fn cmd_tune(
    sc: &Scenario,
    mode: TuneMode,
    budget: usize,
    random_k: usize,
    seed: u64,
    parallel: usize,
    out: Option<&Path>,
) -> Result<TuneReport, CliError> {
    let space = space_of(sc);
    let p = problem(sc, &space);
    let mut options = TunerOptions::new(budget, seed);
    options.parallel = parallel;
    let mut summary = vec![SummaryRow::of(
        "default",
        &evaluate(sc, &space, &space.default_config(), seed)?,
    )];
    let random_rows =
        |k: usize, summary: &mut Vec<SummaryRow>| -> Result<Vec<TrialRecord>, CliError> {
            let mut trials = Vec::new();
            for i in 0..k {
                let c = random_config(&space, derive_seed(seed, "random", i as u64));
                let r = evaluate(sc, &space, &c, seed)?;
                summary.push(SummaryRow::of(&format!("random_{}", i + 1), &r));
                trials.push(TrialRecord::from_result(
                    i,
                    c,
                    derive_seed(seed, "eval", 0),
                    r,
                    0.0,
                ));
            }
            Ok(trials)
        };
    let run = match mode {
        TuneMode::Tune => {
            let run = optimize(&p, &options, &mut |_| {})?;
            summary.push(tuned_row(sc, &space, "tuned", &run, seed)?);
            let cg_space = space.cgroups_only();
            let cg = optimize(&problem(sc, &cg_space), &options, &mut |_| {})?;
            summary.push(tuned_row(sc, &space, "cgroups_only", &cg, seed)?);
            random_rows(random_k, &mut summary)?;
            run
        }
        TuneMode::CgroupsOnly => {
            let cg_space = space.cgroups_only();
            let run = optimize(&problem(sc, &cg_space), &options, &mut |_| {})?;
            summary.push(tuned_row(sc, &space, "cgroups_only", &run, seed)?);
            run
        }
        TuneMode::RandomK(k) => {
            let history = random_rows(k, &mut summary)?;
            TuningRun {
                outcome: TunerOutcome::from_history(&history, Provenance::Random),
                history,
            }
        }
        TuneMode::Oracle => {
            let run = brute_force_oracle(&p, seed, parallel)?;
            summary.push(tuned_row(sc, &space, "oracle", &run, seed)?);
            run
        }
    };
    if let Some(out) = out {
        create_dir(out)?;
        write_run(out, &run)?;
        let mut w = csv_writer(out.join("summary.csv"))?;
        for row in &summary {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(TuneReport { run, summary })
}

/// A knob re-gridded for exhaustive search: `name=min:max:step`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl std::str::FromStr for KnobRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, range) = s
            .split_once('=')
            .ok_or_else(|| format!("expected name=min:max:step, got {s}"))?;
        let parts: Vec<f64> = range
            .split(':')
            .map(|v| v.parse::<f64>().map_err(|e| format!("{v}: {e}")))
            .collect::<Result<_, _>>()?;
        let [min, max, step] = parts[..] else {
            return Err(format!("expected min:max:step, got {range}"));
        };
        Ok(Self {
            name: name.to_string(),
            min,
            max,
            step,
        })
    }
}

/// Space with every knob but `free` pinned to the default config.
pub fn reduced_space(sc: &Scenario, free: &[KnobRange]) -> Result<ConfigSpace, CliError> {
    let full = space_of(sc);
    if free.is_empty() {
        return Ok(full);
    }
    let names: Vec<&str> = free.iter().map(|k| k.name.as_str()).collect();
    let mut space = full.pin_except(&names, &full.default_config());
    for k in free {
        space
            .set_range(&k.name, k.min, k.max, k.step)
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok(space)
}

/// Evaluates every grid point of the (reduced) space.
pub fn cmd_oracle(
    sc: &Scenario,
    free: &[KnobRange],
    seed: u64,
    parallel: usize,
    out: Option<&Path>,
) -> Result<TuningRun, CliError> {
    let space = reduced_space(sc, free)?;
    let run = brute_force_oracle(&problem(sc, &space), seed, parallel)?;
    if let Some(out) = out {
        create_dir(out)?;
        write_run(out, &run)?;
        let mut w = csv_writer(out.join("oracle.csv"))?;
        let mut header: Vec<String> = (0..space.dims()).map(|i| space.knob_name(i)).collect();
        header.extend(["satisfaction_rate", "objective", "feasible"].map(String::from));
        w.write_record(&header)?;
        for t in &run.history {
            let row: Vec<String> = space
                .quota_knobs
                .iter()
                .map(|k| t.config.quotas[&k.node].to_string())
                .chain(
                    space
                        .adaptor_knobs
                        .iter()
                        .map(|k| t.config.adaptors[&k.edge].to_string()),
                )
                .chain([
                    t.satisfaction_rate.to_string(),
                    t.objective.to_string(),
                    t.feasible.to_string(),
                ])
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(run)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayReport {
    pub result: EvaluationResult,
    /// Whether a stored trial was reproduced exactly; None for bare configs.
    pub matches: Option<bool>,
}

/// Re-evaluates a stored trial with its own seed, or a bare config over the
/// evaluation span.
pub fn cmd_replay(
    sc: &Scenario,
    file: &Path,
    seed: u64,
    out: Option<&Path>,
) -> Result<ReplayReport, CliError> {
    let text = fs::read_to_string(file)
        .map_err(|e| CliError::Validation(format!("{}: {e}", file.display())))?;
    let space = space_of(sc);
    let report = if let Ok(trial) = serde_json::from_str::<TrialRecord>(&text) {
        let r = problem(sc, &space).evaluate(&trial.config, trial.seed, sc.profiling.trial_secs)?;
        let again = TrialRecord::from_result(
            trial.iteration,
            trial.config.clone(),
            trial.seed,
            r.clone(),
            0.0,
        );
        ReplayReport {
            result: r,
            matches: Some(
                again
                    == TrialRecord {
                        wall_ms: 0.0,
                        ..trial
                    },
            ),
        }
    } else {
        let config: Config = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("{}: not a config or trial: {e}", file.display()))
        })?;
        space
            .check(&config)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        ReplayReport {
            result: evaluate(sc, &space, &config, seed)?,
            matches: None,
        }
    };
    if let Some(out) = out {
        create_dir(out)?;
        write_file(out.join("replay.json"), &json(&report))?;
    }
    Ok(report)
}

/// Cell `[i][j]`: the config of scenario `i` evaluated on scenario `j`.
#[derive(Debug, Clone)]
pub struct CrossMatrix {
    pub names: Vec<String>,
    pub cells: Vec<Vec<EvaluationResult>>,
}

impl CrossMatrix {
    /// Whether every diagonal cell is strictly best in its column under
    /// (feasible, objective) order.
    pub fn diagonal_dominant(&self) -> bool {
        let n = self.names.len();
        (0..n).all(|j| {
            let key = |i: usize| (self.cells[i][j].feasible, self.cells[i][j].objective);
            (0..n).filter(|&i| i != j).all(|i| key(j) > key(i))
        })
    }
}

/// Evaluates each scenario's config on every scenario. Without `configs`
/// each scenario is tuned first.
pub fn cmd_cross_eval(
    scenarios: &[Scenario],
    configs: Option<Vec<Config>>,
    budget: usize,
    seed: u64,
    parallel: usize,
    out: Option<&Path>,
) -> Result<CrossMatrix, CliError> {
    let configs = match configs {
        Some(c) => c,
        None => scenarios
            .iter()
            .map(|sc| {
                let space = space_of(sc);
                let mut options = TunerOptions::new(budget, seed);
                options.parallel = parallel;
                match optimize(&problem(sc, &space), &options, &mut |_| {})?.outcome {
                    TunerOutcome::Best { config, .. } => Ok(config),
                    TunerOutcome::Unsat { .. } => Ok(space.default_config()),
                }
            })
            .collect::<Result<Vec<_>, CliError>>()?,
    };
    let mut cells = Vec::new();
    for c in &configs {
        let mut row = Vec::new();
        for sc in scenarios {
            let space = space_of(sc);
            let (fitted, defaulted, dropped) = space.reshape(c);
            for k in defaulted {
                log::warn!(
                    "{}: knob {k} missing, default substituted",
                    sc.stack.stack_id
                );
            }
            for k in dropped {
                log::warn!("{}: knob {k} does not apply, ignored", sc.stack.stack_id);
            }
            row.push(evaluate(sc, &space, &fitted, seed)?);
        }
        cells.push(row);
    }
    let m = CrossMatrix {
        names: scenarios.iter().map(|s| s.stack.stack_id.clone()).collect(),
        cells,
    };
    if let Some(out) = out {
        create_dir(out)?;
        let mut w = csv_writer(out.join("cross_eval.csv"))?;
        w.write_record([
            "config_from",
            "evaluated_on",
            "satisfaction_rate",
            "objective",
            "feasible",
        ])?;
        for (i, row) in m.cells.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                w.write_record([
                    m.names[i].clone(),
                    m.names[j].clone(),
                    r.satisfaction_rate.to_string(),
                    r.objective.to_string(),
                    r.feasible.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(m)
}

/// Runs the scenario's timeline under the runtime guard, reading and
/// updating the library at `library` when given.
pub fn cmd_timeline(
    sc: &Scenario,
    seed: u64,
    budget: Option<usize>,
    parallel: usize,
    library: Option<&Path>,
    out: Option<&Path>,
) -> Result<DeploymentReport, CliError> {
    let mut lib = match library {
        Some(p) => ConfigLibrary::load(p)
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => ConfigLibrary::new(),
    };
    let mut options = GuardOptions::new(seed);
    options.budget = budget;
    options.parallel = parallel;
    let report = orchestrate(sc, &options, &mut lib)?;
    if let Some(p) = library {
        lib.save(p)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    }
    if let Some(out) = out {
        create_dir(out)?;
        let f = fs::File::create(out.join("timeline.csv"))?;
        report.write_csv(f)?;
        let f = fs::File::create(out.join("windows.csv"))?;
        report.write_windows_csv(f)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub quota: f64,
    pub mean_threads: f64,
    pub max_threads: u32,
    /// Mean seconds from frame publication to callback completion.
    pub mean_latency_s: f64,
}

/// Simulates the scenario once per quota of `node`, everything else
/// unconstrained.
pub fn cmd_sweep(
    sc: &Scenario,
    node: &str,
    quotas: &[f64],
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, CliError> {
    let spec = sc
        .stack
        .node(node)
        .ok_or_else(|| CliError::Validation(format!("unknown node {node}")))?;
    let topic = spec
        .subscriptions
        .first()
        .map(|s| s.topic.clone())
        .ok_or_else(|| CliError::Validation(format!("{node} subscribes to nothing")))?;
    let settings = sc.settings.with_seed(seed);
    let mut rows = Vec::new();
    let mut samples: Vec<(f64, f64, u32)> = Vec::new();
    for &q in quotas {
        let mut c = Config::empty(Provenance::Default);
        c.quotas.insert(node.to_string(), q);
        let trace = run_simulation(&sc.stack, &c, &settings)?;
        let ts = thread_stats(&trace, node, 0, trace.duration);
        rows.push(SweepRow {
            quota: q,
            mean_threads: ts.mean,
            max_threads: ts.max,
            mean_latency_s: callback_latency(&trace, node, &topic).unwrap_or(f64::NAN),
        });
        for e in &trace.events {
            if let EventKind::ActiveThreadSample { node: n, count } = &e.kind {
                if &**n == node {
                    samples.push((q, e.time as f64 / 1e6, *count));
                }
            }
        }
    }
    if let Some(out) = out {
        create_dir(out)?;
        let mut w = csv_writer(out.join("sweep.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv_writer(out.join("threads.csv"))?;
        w.write_record(["quota", "time", "active_threads"])?;
        for (q, t, n) in samples {
            w.write_record([q.to_string(), t.to_string(), n.to_string()])?;
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Artifact file names merged by `report`, and the merged file each feeds.
const MERGED: [(&str, &str); 7] = [
    ("progress.csv", "progress.csv"),
    ("summary.csv", "summary.csv"),
    ("cross_eval.csv", "cross_eval.csv"),
    ("sweep.csv", "sweep.csv"),
    ("threads.csv", "threads.csv"),
    ("timeline.csv", "timeline.csv"),
    ("windows.csv", "windows.csv"),
];

fn collect_artifacts(
    dir: &Path,
    skip: &Path,
    found: &mut BTreeMap<String, Vec<PathBuf>>,
) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p == skip {
            continue;
        }
        if p.is_dir() {
            collect_artifacts(&p, skip, found)?;
        } else if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
            if MERGED.iter().any(|(a, _)| *a == name) || name == "history.ndjson" {
                found.entry(name.to_string()).or_default().push(p);
            }
        }
    }
    Ok(())
}

/// Merges every run's artifacts under `dir` into `dir/report/`, adding a
/// `run` column with the artifact's directory relative to `dir`.
pub fn cmd_report(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let out = dir.join("report");
    let mut found = BTreeMap::new();
    if dir.is_dir() {
        collect_artifacts(dir, &out, &mut found)?;
    }
    if found.is_empty() {
        return Err(CliError::MissingArtifacts(dir.display().to_string()));
    }
    create_dir(&out)?;
    let run_of = |p: &Path| -> String {
        let parent = p.parent().unwrap_or(dir);
        let rel = parent
            .strip_prefix(dir)
            .unwrap_or(parent)
            .display()
            .to_string();
        if rel.is_empty() {
            ".".into()
        } else {
            rel
        }
    };
    let mut written = Vec::new();
    for (artifact, merged) in MERGED {
        let Some(paths) = found.get(artifact) else {
            continue;
        };
        let target = out.join(merged);
        let mut w = csv_writer(target.clone())?;
        let mut header_written = false;
        for p in paths {
            let mut r = csv::Reader::from_path(p)?;
            if !header_written {
                let mut h = vec!["run".to_string()];
                h.extend(r.headers()?.iter().map(String::from));
                w.write_record(&h)?;
                header_written = true;
            }
            for rec in r.records() {
                let rec = rec?;
                let mut row = vec![run_of(p)];
                row.extend(rec.iter().map(String::from));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        written.push(target);
    }
    if let Some(paths) = found.get("history.ndjson") {
        let target = out.join("satisfaction.csv");
        let mut w = csv_writer(target.clone())?;
        w.write_record(["run", "iteration", "satisfaction_rate", "feasible"])?;
        for p in paths {
            let text = fs::read_to_string(p)?;
            let history = crate::tuner::read_history(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            for t in history {
                w.write_record([
                    run_of(p),
                    t.iteration.to_string(),
                    t.satisfaction_rate.to_string(),
                    t.feasible.to_string(),
                ])?;
            }
        }
        w.flush()?;
        written.push(target);
    }
    Ok(written)
}
