use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::{build_stream, load_splits};
use super::metrics::{delta_loss, forgetting_ratio, logit_stats, prediction_heatmap, LogitStats, MetricsLog, RhoReport};
use crate::error::{Error, Result};
use crate::memory::MemoryBudget;
use crate::methods::{evaluate, MethodState, PlateauTracker, TrainOptions};
use crate::nn::{cross_entropy, Gradients, MlpSpec, Model, OptimizerState};
use crate::rng::{stream, RngStreams};
use crate::tasks::{Splits, TaskStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub task: usize,
    pub after: usize,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFingerprint {
    pub description: String,
    pub train: String,
    pub val: String,
    pub test: String,
}

/// Result of one arm at one seed.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub seed: u64,
    pub log: MetricsLog,
    pub model: Model,
    pub state: MethodState,
    pub heatmaps: Vec<Heatmap>,
    /// Final-model logit statistics on each task's test set.
    pub logit_stats: Vec<LogitStats>,
    pub joint: Option<Vec<f64>>,
    pub rho: Option<RhoReport>,
    pub fingerprints: Vec<TaskFingerprint>,
    /// Sanity warnings, e.g. a task ending below chance.
    pub alerts: Vec<String>,
}

/// Weight count of an architecture, biases excluded.
pub fn weight_count(spec: &MlpSpec) -> u64 {
    let mut widths = vec![spec.input];
    widths.extend(&spec.hidden);
    let last = *widths.last().expect("non-empty");
    let trunk: usize = widths.windows(2).map(|w| w[0] * w[1]).sum();
    (trunk + spec.heads.iter().map(|h| h * last).sum::<usize>()) as u64
}

/// Per-class memory counts of every task in the stream.
pub fn memory_plan(config: &ExperimentConfig, stream: &TaskStream, spec: &MlpSpec) -> Result<Vec<Vec<usize>>> {
    if !config.method.kind.uses_memory() {
        return Ok(stream.tasks.iter().map(|t| vec![0; t.class_count()]).collect());
    }
    let weights = weight_count(spec);
    let budget: MemoryBudget = config.memory.budget;
    stream
        .tasks
        .iter()
        .map(|t| budget.per_class_counts(t.class_count(), weights, spec.input, stream.len()))
        .collect()
}

/// Loads the data and builds the stream of `seed`.
pub fn prepare_stream(config: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<TaskStream> {
    let stream = build_stream(splits, &config.stream, &RngStreams::new(seed))?;
    if stream.len() != config.stream.n_tasks() {
        return Err(Error::Config("stream produced an unexpected number of tasks".into()));
    }
    Ok(stream)
}

/// Loads data and runs every task of the config at `seed`.
pub fn run_sequence(config: &ExperimentConfig, seed: u64) -> Result<RunArtifacts> {
    config.validate()?;
    let splits = load_splits(&config.data, config.split_seed)?;
    let stream = prepare_stream(config, &splits, seed)?;
    run_sequence_on(config, seed, &stream, |_| Ok(()))
}

/// Sequential training on a prepared stream. `observer` sees the log after
/// every task, so callers can flush partial results.
pub fn run_sequence_on(
    config: &ExperimentConfig,
    seed: u64,
    stream: &TaskStream,
    mut observer: impl FnMut(&MetricsLog) -> Result<()>,
) -> Result<RunArtifacts> {
    let streams = RngStreams::new(seed);
    let d = stream.tasks.first().ok_or_else(|| Error::Config("empty task stream".into()))?.train.dim();
    let spec = config.mlp_spec(d, stream.head_widths());
    let mut model = Model::from_spec(&spec, &mut streams.stream(stream::INIT))?;
    let plan = memory_plan(config, stream, &spec)?;
    let capacity = plan.iter().map(|c| c.iter().sum::<usize>()).max().unwrap_or(0);
    let mut state = MethodState::new(config.method, capacity, config.memory.selection)?;

    let mut log = MetricsLog::default();
    let mut heatmaps = Vec::new();
    let mut alerts = Vec::new();
    for (t, task) in stream.tasks.iter().enumerate() {
        let opts = TrainOptions {
            epochs: config.train.epochs,
            batch_size: config.train.batch_size,
            optimizer: config.train.optimizer,
            schedule: config.train.schedule,
            memory_per_class: plan[t].clone(),
            selection: config.memory.selection,
            probe: config.memory.probe,
            probe_spec: Some(spec.clone()),
        };
        let first = &stream.tasks[0];
        let track = config.eval.first_task_per_epoch;
        let mut first_curve = Vec::new();
        let report = state.train_task(&mut model, task, &opts, &streams, |m, model| {
            if track {
                first_curve.push((t, m.epoch, evaluate(model, &first.test, first.head)?.1));
            }
            Ok(())
        })?;
        log.first_task_epochs.extend(first_curve);
        log.epochs.push(report.epochs);
        log.task_seconds.push(report.seconds);
        log.task_optima.push(report.final_train_loss);
        log.memory_sizes.push(state.memory.len());

        let (mut accs, mut losses, mut deltas) = (Vec::new(), Vec::new(), Vec::new());
        for (j, past) in stream.tasks[..=t].iter().enumerate() {
            let (l, a) = evaluate(&model, &past.test, past.head)?;
            accs.push(a);
            losses.push(l);
            if j < t {
                deltas.push(delta_loss(&model, &past.train, past.head, log.task_optima[j])?);
            }
            if config.eval.figures {
                heatmaps.push(Heatmap {
                    task: j,
                    after: t,
                    matrix: prediction_heatmap(&model, &past.test, past.head)?,
                });
            }
        }
        let chance = 1.0 / task.class_count() as f64;
        if accs[t] < chance {
            alerts.push(format!("task {t} finished below chance: {:.4} < {chance:.4}", accs[t]));
        }
        log.accuracy.push(accs);
        log.test_loss.push(losses);
        log.delta.push(deltas);
        observer(&log)?;
    }

    let logit_stats = if config.eval.figures {
        stream
            .tasks
            .iter()
            .map(|task| logit_stats(&model, &task.test, task.head))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let (joint, rho) = if config.eval.joint_reference {
        let joint = joint_reference(config, seed, stream)?;
        let chance: Vec<f64> = stream.tasks.iter().map(|t| 1.0 / t.class_count() as f64).collect();
        let rho = forgetting_ratio(&log, &joint, &chance)?;
        (Some(joint), Some(rho))
    } else {
        (None, None)
    };
    let fingerprints = stream
        .tasks
        .iter()
        .map(|t| TaskFingerprint {
            description: t.description.clone(),
            train: t.train.fingerprint(),
            val: t.val.fingerprint(),
            test: t.test.fingerprint(),
        })
        .collect();
    Ok(RunArtifacts {
        seed,
        log,
        model,
        state,
        heatmaps,
        logit_stats,
        joint,
        rho,
        fingerprints,
        alerts,
    })
}

/// Splits `batch` over `n` tasks as evenly as possible.
fn balanced_shares(batch: usize, n: usize) -> Vec<usize> {
    (0..n).map(|t| batch / n + usize::from(t < batch % n)).collect()
}

/// Test accuracy per task of one model trained on all tasks at once for
/// `n_tasks * epochs` epochs. Every minibatch draws an equal share from each
/// task (each task on its own head).
pub fn joint_reference(config: &ExperimentConfig, seed: u64, stream: &TaskStream) -> Result<Vec<f64>> {
    let streams = RngStreams::new(seed);
    let d = stream.tasks[0].train.dim();
    let spec = config.mlp_spec(d, stream.head_widths());
    let mut model = Model::from_spec(&spec, &mut streams.indexed(stream::INIT, 1))?;
    let mut opt = OptimizerState::new(config.train.optimizer, &model)?;
    let mut rng = streams.indexed(stream::SHUFFLE, usize::MAX);
    let n = stream.len();
    let batch = config.train.batch_size;
    let shares = balanced_shares(batch, n);
    let total: usize = stream.tasks.iter().map(|t| t.train.len()).sum();
    let steps_per_epoch = total.div_ceil(batch);
    let mut orders: Vec<Vec<usize>> = stream.tasks.iter().map(|t| (0..t.train.len()).collect()).collect();
    for o in &mut orders {
        o.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; n];
    let mut plateau = PlateauTracker::default();

    for _ in 0..n * config.train.epochs {
        for _ in 0..steps_per_epoch {
            let mut grads = Gradients::zeros(&model);
            for (t, task) in stream.tasks.iter().enumerate() {
                if shares[t] == 0 {
                    continue;
                }
                let mut rows = Vec::with_capacity(shares[t]);
                while rows.len() < shares[t] {
                    if cursors[t] == orders[t].len() {
                        orders[t].shuffle(&mut rng);
                        cursors[t] = 0;
                    }
                    rows.push(orders[t][cursors[t]]);
                    cursors[t] += 1;
                }
                let x = task.train.inputs.select_rows(&rows);
                let y: Vec<usize> = rows.iter().map(|&i| task.train.labels[i]).collect();
                let (z, cache) = model.forward(&x, task.head)?;
                let (_, gz) = cross_entropy(&z, &y)?;
                grads.add_scaled(&model.backward(&cache, &gz)?, shares[t] as f32 / batch as f32);
            }
            opt.step(&mut model, &grads)?;
        }
        let mut val = 0.0;
        for task in &stream.tasks {
            val += evaluate(&model, &task.val, task.head)?.0;
        }
        opt.lr *= plateau.observe(&config.train.schedule, val / n as f64);
    }
    stream
        .tasks
        .iter()
        .map(|t| evaluate(&model, &t.test, t.head).map(|(_, a)| a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_and_weights() {
        assert_eq!(balanced_shares(128, 5), vec![26, 26, 26, 25, 25]);
        assert_eq!(balanced_shares(7, 7), vec![1; 7]);
        let spec = MlpSpec::single_head(784, vec![1024; 4], 10);
        assert_eq!(weight_count(&spec), 3_958_784);
    }
}
