//! Library side of the `fsrlab` binary. Each `cmd_*` function is what the
//! matching subcommand runs; `main` only parses arguments and prints.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use fsrlab_core::bench::{
    build_report, logit_bar_svgs, run_dir, run_sequence_on, write_partial, write_run, load_splits, prepare_stream,
    ExperimentConfig, ExperimentFile, MetricsLog, Report,
};
use fsrlab_core::memory::{
    ewc_equivalent_budget_with, parse_param_spec, select_gradient_based, select_herding_stratified,
    select_stratified_random, BudgetReport, GradientProbe, SelectionStrategy, StorageMode,
};
use fsrlab_core::nn::{MlpSpec, Model};
use fsrlab_core::rng::{stream, RngStreams};
use fsrlab_core::tasks::{load_csv, load_idx, LabeledDataset};

/// Environment variable naming the default output root of `run`.
pub const OUT_ENV: &str = "FSRLAB_OUT";

/// A failure with its exit code: 2 for usage or configuration problems,
/// 1 for everything that goes wrong afterwards.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub jobs: usize,
    /// Save the final model and method state of every run.
    pub checkpoint: bool,
    /// Replaces the config's seed list.
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub arm: String,
    pub seed: u64,
    pub dir: PathBuf,
    /// Final task-average accuracy, or the error that stopped the run.
    pub result: Result<f64, String>,
}

/// Executes every arm and seed of a config file below `out/<name>/`.
pub fn cmd_run(args: &RunArgs) -> CliResult<Vec<RunOutcome>> {
    if !args.config.is_file() {
        return Err(usage(format!("config file {} not found", args.config.display())));
    }
    let file = ExperimentFile::load(&args.config, &args.overrides).map_err(usage)?;
    let mut arms = file.arms().map_err(usage)?;
    if let Some(seeds) = &args.seeds {
        for a in &mut arms {
            a.seeds = seeds.clone();
        }
    }
    let root = args.out.join(&file.base.name);
    run_arms(&arms, &root, args.jobs.max(1), args.checkpoint)
}

/// Runs `(arm, seed)` pairs on up to `jobs` threads. Each pair writes only
/// inside its own directory.
pub fn run_arms(arms: &[ExperimentConfig], root: &Path, jobs: usize, checkpoint: bool) -> CliResult<Vec<RunOutcome>> {
    let work: VecDeque<(usize, u64)> = arms
        .iter()
        .enumerate()
        .flat_map(|(i, a)| a.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let total = work.len();
    let queue = Mutex::new(work);
    let results = Mutex::new(Vec::with_capacity(total));
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(total.max(1)) {
            scope.spawn(|| loop {
                let Some((i, seed)) = queue.lock().expect("queue").pop_front() else { break };
                let outcome = run_one(&arms[i], root, seed, checkpoint);
                results.lock().expect("results").push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("results");
    results.sort_by_key(|(i, o)| (*i, o.seed));
    Ok(results.into_iter().map(|(_, o)| o).collect())
}

fn run_one(config: &ExperimentConfig, root: &Path, seed: u64, checkpoint: bool) -> RunOutcome {
    let dir = run_dir(root, config, seed);
    let mut progress = MetricsLog::default();
    let result = (|| -> fsrlab_core::Result<f64> {
        let splits = load_splits(&config.data, config.split_seed)?;
        let stream = prepare_stream(config, &splits, seed)?;
        let art = run_sequence_on(config, seed, &stream, |log| {
            progress = log.clone();
            write_partial(&dir, config, seed, log, None)
        })?;
        write_run(&dir, config, &art, checkpoint)?;
        let last = art.log.accuracy.last().map_or(0.0, |r| r.iter().sum::<f64>() / r.len() as f64);
        Ok(last)
    })();
    let result = result.map_err(|e| {
        let msg = e.to_string();
        let _ = write_partial(&dir, config, seed, &progress, Some(msg.clone()));
        msg
    });
    RunOutcome {
        arm: config.arm_label(),
        seed,
        dir,
        result,
    }
}

// ---------------------------------------------------------------------------
// budget

#[derive(Debug, Clone)]
pub struct BudgetArgs {
    pub model: String,
    pub d: u64,
    pub k: u64,
    pub n_tasks: u64,
    pub storage: StorageMode,
}

pub fn cmd_budget(args: &BudgetArgs) -> CliResult<BudgetReport> {
    let params = parse_param_spec(&args.model).map_err(usage)?;
    ewc_equivalent_budget_with(params, args.d, args.k, args.n_tasks, args.storage).map_err(usage)
}

pub fn format_budget(r: &BudgetReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "parameters (weights, no biases): {}", r.params);
    let _ = writeln!(s, "EWC floats (anchor + Fisher):    {}", r.ewc_floats);
    let _ = writeln!(s, "floats per stored image:         {}", r.floats_per_image);
    let _ = writeln!(s, "tasks:                           {}", r.n_tasks);
    let _ = writeln!(s, "images per task (exact):         {:.4}", r.exact_images_per_task);
    let _ = writeln!(s, "images per task:                 {}", r.images_per_task);
    s
}

// ---------------------------------------------------------------------------
// select-demo

#[derive(Debug, Clone)]
pub struct SelectArgs {
    /// A CSV file, or an IDX image file paired with `labels`.
    pub dataset: PathBuf,
    pub labels: Option<PathBuf>,
    pub strategy: SelectionStrategy,
    /// Examples per class.
    pub m: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Hidden widths of the freshly initialized probe model used by the
    /// gradient strategy.
    pub hidden: Vec<usize>,
    pub probe: GradientProbe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSummary {
    pub indices: Vec<usize>,
    /// `(class, population, selected, ||mean(selected) - mean(class)||)`.
    pub per_class: Vec<(usize, usize, usize, f64)>,
}

pub fn load_dataset(path: &Path, labels: Option<&Path>) -> CliResult<LabeledDataset> {
    if !path.is_file() {
        return Err(usage(format!("dataset {} not found", path.display())));
    }
    match labels {
        Some(l) => load_idx(path, l).map_err(runtime),
        None if path.extension().is_some_and(|e| e == "csv") => load_csv(path).map_err(runtime),
        None => Err(usage("IDX image files need --labels")),
    }
}

/// Runs one selection strategy on a whole dataset and writes
/// `selected_indices.csv` and `selection_summary.csv` into `out`.
pub fn cmd_select_demo(args: &SelectArgs) -> CliResult<SelectionSummary> {
    let ds = load_dataset(&args.dataset, args.labels.as_deref())?;
    let summary = select_demo(&ds, args)?;
    fs::create_dir_all(&args.out).map_err(runtime)?;
    let mut idx = String::from("class,index\n");
    for &i in &summary.indices {
        let _ = writeln!(idx, "{},{i}", ds.labels[i]);
    }
    fs::write(args.out.join("selected_indices.csv"), idx).map_err(runtime)?;
    let mut s = String::from("class,population,selected,mean_gap\n");
    for (c, n, k, gap) in &summary.per_class {
        let _ = writeln!(s, "{c},{n},{k},{gap}");
    }
    fs::write(args.out.join("selection_summary.csv"), s).map_err(runtime)?;
    Ok(summary)
}

/// The selection itself, without any file output.
pub fn select_demo(ds: &LabeledDataset, args: &SelectArgs) -> CliResult<SelectionSummary> {
    let counts = vec![args.m; ds.class_count];
    let streams = RngStreams::new(args.seed);
    let picked = match args.strategy {
        SelectionStrategy::Random => select_stratified_random(ds, &counts, &mut streams.stream(stream::SELECTION)),
        SelectionStrategy::Herding => select_herding_stratified(ds, &counts),
        SelectionStrategy::Gradient => {
            let mut rng = streams.stream(stream::PROBE);
            let spec = MlpSpec::single_head(ds.dim(), args.hidden.clone(), ds.class_count);
            Model::from_spec(&spec, &mut rng)
                .and_then(|m| select_gradient_based(&m, ds, 0, &counts, &args.probe, &mut rng).map(|r| r.0))
        }
    }
    .map_err(runtime)?;
    let by_class = ds.class_indices();
    let per_class = by_class
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let chosen: Vec<usize> = picked.iter().copied().filter(|&i| ds.labels[i] == c).collect();
            (c, members.len(), chosen.len(), mean_gap(ds, members, &chosen))
        })
        .collect();
    Ok(SelectionSummary {
        indices: picked,
        per_class,
    })
}

fn mean_gap(ds: &LabeledDataset, all: &[usize], chosen: &[usize]) -> f64 {
    let mean = |rows: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; ds.dim()];
        for &i in rows {
            for (a, &v) in m.iter_mut().zip(ds.input(i)) {
                *a += f64::from(v);
            }
        }
        m.iter_mut().for_each(|v| *v /= rows.len().max(1) as f64);
        m
    };
    if chosen.is_empty() {
        return f64::NAN;
    }
    mean(all).iter().zip(mean(chosen)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// report

/// Aggregates a run root and renders logit-bar plots per complete run. Any
/// missing or partial run is an error listing them (the report files are
/// still written for what is complete).
pub fn cmd_report(root: &Path) -> CliResult<Report> {
    if !root.is_dir() {
        return Err(usage(format!("run directory {} not found", root.display())));
    }
    let report = build_report(root).map_err(runtime)?;
    for arm in fs::read_dir(root).map_err(runtime)?.flatten() {
        let Ok(seeds) = fs::read_dir(arm.path()) else { continue };
        for sd in seeds.flatten() {
            if sd.path().is_dir() && !report.incomplete.contains(&sd.path()) {
                logit_bar_svgs(&sd.path()).map_err(runtime)?;
            }
        }
    }
    if report.arms.is_empty() && report.incomplete.is_empty() {
        return Err(runtime(format!("no runs found below {}", root.display())));
    }
    if !report.incomplete.is_empty() {
        let list: Vec<String> = report.incomplete.iter().map(|p| p.display().to_string()).collect();
        return Err(runtime(format!("incomplete runs:\n  {}", list.join("\n  "))));
    }
    Ok(report)
}
