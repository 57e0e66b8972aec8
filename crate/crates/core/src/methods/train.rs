use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{MethodConfig, MethodKind};
use super::ewc::{ewc_accumulate_fisher, ewc_penalty, EwcState};
use super::objectives::{lwf_penalty, memory_penalty, sample_replay, LwfState};
use crate::checkpoint::{load_model, save_model, Container};
use crate::error::{Error, Result};
use crate::memory::{
    record_logits, select_gradient_based, select_herding_stratified, select_stratified_random, EpisodicMemory,
    GradientProbe, MemoryEntry, SelectionStrategy,
};
use crate::nn::{cross_entropy, MlpSpec, Model, OptimizerSpec, OptimizerState, Tensor};
use crate::rng::{stream, Rng, RngStreams};
use crate::tasks::{LabeledDataset, Task};

/// Step-size policy within one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply the step size by `factor` once validation loss has not
    /// improved for `patience` consecutive epochs.
    Plateau { factor: f64, patience: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTracker {
    best: f64,
    stale: usize,
}

impl Default for PlateauTracker {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
        }
    }
}

impl PlateauTracker {
    /// Feeds one validation loss; returns the multiplier to apply now.
    pub fn observe(&mut self, schedule: &LrSchedule, val_loss: f64) -> f64 {
        let LrSchedule::Plateau { factor, patience } = *schedule else {
            return 1.0;
        };
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            return 1.0;
        }
        self.stale += 1;
        if self.stale >= patience.max(1) {
            self.stale = 0;
            factor
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Memory entries to keep per class of each task (replaying kinds only).
    #[serde(default)]
    pub memory_per_class: Vec<usize>,
    #[serde(default)]
    pub selection: SelectionStrategy,
    #[serde(default)]
    pub probe: GradientProbe,
    /// Architecture of the freshly initialized model that scores examples
    /// for gradient-based selection; `None` probes a copy of the trained
    /// model.
    #[serde(default)]
    pub probe_spec: Option<MlpSpec>,
}

impl TrainOptions {
    pub fn new(epochs: usize, batch_size: usize, optimizer: OptimizerSpec) -> Self {
        Self {
            epochs,
            batch_size,
            optimizer,
            schedule: LrSchedule::Constant,
            memory_per_class: Vec::new(),
            selection: SelectionStrategy::Random,
            probe: GradientProbe::default(),
            probe_spec: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean total objective over the epoch's steps.
    pub train_loss: f64,
    /// Accuracy of the minibatch predictions made during the epoch.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub task_id: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Mean cross-entropy on the task's training data after the last epoch.
    pub final_train_loss: f64,
    pub memory_recorded: usize,
    pub seconds: f64,
}

/// Mean cross-entropy and accuracy of `model` on `ds`.
pub fn evaluate(model: &Model, ds: &LabeledDataset, head: usize) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    let rows: Vec<usize> = (0..ds.len()).collect();
    for part in rows.chunks(1024) {
        let x = ds.inputs.select_rows(part);
        let y: Vec<usize> = part.iter().map(|&i| ds.labels[i]).collect();
        let z = model.predict(&x, head)?;
        let (l, _) = cross_entropy(&z, &y)?;
        loss += f64::from(l) * part.len() as f64;
        correct += count_correct(&z, &y);
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

fn argmax(row: &[f32]) -> usize {
    // First maximum wins.
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(z: &Tensor<f32>, y: &[usize]) -> usize {
    z.iter_rows().zip(y).filter(|(r, &y)| argmax(r) == y).count()
}

/// Everything a method carries from one task to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodState {
    pub config: MethodConfig,
    pub memory: EpisodicMemory,
    pub ewc: EwcState,
    pub lwf: Option<LwfState<f32>>,
    /// Training loss of each finished task at its own end.
    pub task_optima: BTreeMap<usize, f64>,
    pub trained_heads: Vec<usize>,
}

impl MethodState {
    pub fn new(config: MethodConfig, memory_capacity: usize, strategy: SelectionStrategy) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            memory: EpisodicMemory::new(memory_capacity, strategy),
            ewc: EwcState::default(),
            lwf: None,
            task_optima: BTreeMap::new(),
            trained_heads: Vec::new(),
        })
    }

    /// Trains `model` on one task and runs the end-of-task hooks.
    /// `on_epoch` sees the model after every epoch.
    pub fn train_task(
        &mut self,
        model: &mut Model,
        task: &Task,
        opts: &TrainOptions,
        streams: &RngStreams,
        mut on_epoch: impl FnMut(&EpochMetrics, &Model) -> Result<()>,
    ) -> Result<TrainReport> {
        let start = Instant::now();
        let cfg = self.config;
        if opts.epochs == 0 || opts.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if cfg.kind.uses_memory() && opts.memory_per_class.iter().sum::<usize>() == 0 {
            return Err(Error::Config(format!("{} needs a nonzero memory budget", cfg.kind)));
        }
        let head = task.head;
        model.set_active_head(head)?;
        let mut opt = OptimizerState::new(opts.optimizer, model)?;
        let mut shuffle_rng = streams.indexed(stream::SHUFFLE, task.id);
        let mut replay_rng = streams.indexed(stream::REPLAY, task.id);
        let pool: Vec<&MemoryEntry> = self.memory.entries().collect();
        let active = !cfg.is_inert();
        let mut plateau = PlateauTracker::default();
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        let mut epochs = Vec::with_capacity(opts.epochs);

        for epoch in 0..opts.epochs {
            order.shuffle(&mut shuffle_rng);
            let (mut loss_sum, mut correct, mut steps) = (0.0, 0usize, 0usize);
            for batch in order.chunks(opts.batch_size) {
                let x = task.train.inputs.select_rows(batch);
                let y: Vec<usize> = batch.iter().map(|&i| task.train.labels[i]).collect();
                let (z, cache) = model.forward(&x, head)?;
                let (mut loss, gz) = cross_entropy(&z, &y)?;
                correct += count_correct(&z, &y);
                let mut grads = model.backward(&cache, &gz)?;
                if active {
                    let extra = match cfg.kind {
                        k if k.uses_memory() && !pool.is_empty() => {
                            let picked = sample_replay(&pool, cfg.replay_batch, &mut replay_rng);
                            Some(memory_penalty(&cfg, model, &picked)?)
                        }
                        MethodKind::Ewc if self.ewc.is_initialized() => Some(ewc_penalty(model, &self.ewc, cfg.lambda)?),
                        MethodKind::Lwf => match &self.lwf {
                            Some(state) => Some(lwf_penalty(model, state, &x, cfg.lambda, cfg.tau)?),
                            None => None,
                        },
                        _ => None,
                    };
                    if let Some((l, g)) = extra {
                        loss += l;
                        grads.add(&g);
                    }
                }
                if !loss.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                opt.step(model, &grads)?;
                loss_sum += f64::from(loss);
                steps += 1;
            }
            let (val_loss, val_acc) = if task.val.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                evaluate(model, &task.val, head)?
            };
            let metrics = EpochMetrics {
                epoch,
                train_loss: loss_sum / steps as f64,
                train_acc: correct as f64 / task.train.len() as f64,
                val_loss,
                val_acc,
                lr: opt.lr,
            };
            opt.lr *= plateau.observe(&opts.schedule, val_loss);
            on_epoch(&metrics, model)?;
            epochs.push(metrics);
        }

        let (final_train_loss, _) = evaluate(model, &task.train, head)?;
        let memory_recorded = self.end_task(model, task, opts, streams)?;
        self.task_optima.insert(task.id, final_train_loss);
        Ok(TrainReport {
            task_id: task.id,
            epochs,
            final_train_loss,
            memory_recorded,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn end_task(&mut self, model: &Model, task: &Task, opts: &TrainOptions, streams: &RngStreams) -> Result<usize> {
        if !self.trained_heads.contains(&task.head) {
            self.trained_heads.push(task.head);
        }
        let mut recorded = 0;
        match self.config.kind {
            k if k.uses_memory() => {
                if self.config.refresh_memory {
                    self.memory.refresh_logits(model)?;
                }
                let idx = select_memory(model, &task.train, task.head, opts, streams, task.id)?;
                let entries = record_logits(model, &task.train, &idx, task.head, task.id)?;
                recorded = entries.len();
                self.memory.insert_task(task.id, entries, task.train.fingerprint())?;
            }
            MethodKind::Ewc => {
                let mut rng = streams.indexed(stream::FISHER, task.id);
                ewc_accumulate_fisher(&mut self.ewc, model, &task.train, task.head, self.config.fisher_samples, &mut rng)?;
            }
            MethodKind::Lwf => {
                self.lwf = Some(LwfState {
                    snapshot: model.clone(),
                    heads: self.trained_heads.clone(),
                });
            }
            _ => {}
        }
        Ok(recorded)
    }

    /// Writes `method.ck` (plus `lwf.ck` / `memory.ck` when present) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = StateHeader {
            kind: "method_state".into(),
            config: self.config,
            tasks_seen: self.ewc.tasks_seen,
            task_optima: self.task_optima.clone(),
            trained_heads: self.trained_heads.clone(),
            lwf_heads: self.lwf.as_ref().map(|l| l.heads.clone()),
        };
        Container {
            header: serde_json::to_value(header)?,
            arrays: vec![f64_words(&self.ewc.anchor), f64_words(&self.ewc.fisher)],
        }
        .save(&dir.join("method.ck"))?;
        if let Some(l) = &self.lwf {
            save_model(&dir.join("lwf.ck"), &l.snapshot, &BTreeMap::new())?;
        }
        self.memory.save(&dir.join("memory.ck"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("method.ck");
        let c = Container::load(&path)?;
        let h: StateHeader = serde_json::from_value(c.header.clone())?;
        if h.kind != "method_state" || c.arrays.len() != 2 {
            return Err(Error::format(&path, "not a method state checkpoint"));
        }
        let lwf = match h.lwf_heads {
            Some(heads) => Some(LwfState {
                snapshot: load_model(&dir.join("lwf.ck"))?.0,
                heads,
            }),
            None => None,
        };
        Ok(Self {
            config: h.config,
            memory: EpisodicMemory::load(&dir.join("memory.ck"))?,
            ewc: EwcState {
                anchor: words_f64(&c.arrays[0]),
                fisher: words_f64(&c.arrays[1]),
                tasks_seen: h.tasks_seen,
            },
            lwf,
            task_optima: h.task_optima,
            trained_heads: h.trained_heads,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StateHeader {
    kind: String,
    config: MethodConfig,
    tasks_seen: usize,
    task_optima: BTreeMap<usize, f64>,
    trained_heads: Vec<usize>,
    lwf_heads: Option<Vec<usize>>,
}

// The container stores 32-bit words; f64 arrays travel as bit-exact halves.
fn f64_words(v: &[f64]) -> Vec<f32> {
    v.iter()
        .flat_map(|x| {
            let b = x.to_bits();
            [f32::from_bits(b as u32), f32::from_bits((b >> 32) as u32)]
        })
        .collect()
}

fn words_f64(w: &[f32]) -> Vec<f64> {
    w.chunks_exact(2)
        .map(|p| f64::from_bits(u64::from(p[0].to_bits()) | (u64::from(p[1].to_bits()) << 32)))
        .collect()
}

/// Runs the configured selection strategy on a finished task.
pub fn select_memory(
    model: &Model,
    ds: &LabeledDataset,
    head: usize,
    opts: &TrainOptions,
    streams: &RngStreams,
    task_id: usize,
) -> Result<Vec<usize>> {
    let counts = &opts.memory_per_class;
    match opts.selection {
        SelectionStrategy::Random => {
            select_stratified_random(ds, counts, &mut streams.indexed(stream::SELECTION, task_id))
        }
        SelectionStrategy::Herding => select_herding_stratified(ds, counts),
        SelectionStrategy::Gradient => {
            let mut rng: Rng = streams.indexed(stream::PROBE, task_id);
            let probe_model = match &opts.probe_spec {
                Some(spec) => Model::from_spec(spec, &mut rng)?,
                None => model.clone(),
            };
            let probe = GradientProbe {
                optimizer: opts.optimizer,
                ..opts.probe
            };
            Ok(select_gradient_based(&probe_model, ds, head, counts, &probe, &mut rng)?.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_halves_after_patience() {
        let s = LrSchedule::Plateau {
            factor: 0.5,
            patience: 3,
        };
        let mut t = PlateauTracker::default();
        let seq = [1.0, 0.9, 0.95, 0.95, 0.95, 0.8];
        let got: Vec<f64> = seq.iter().map(|&v| t.observe(&s, v)).collect();
        assert_eq!(got, vec![1.0, 1.0, 1.0, 1.0, 0.5, 1.0]);
        assert_eq!(PlateauTracker::default().observe(&LrSchedule::Constant, 1.0), 1.0);
    }

    #[test]
    fn f64_words_are_bit_exact() {
        let v = vec![0.1, -3.5e300, f64::MIN_POSITIVE, 0.0, 1.0 / 3.0];
        assert_eq!(words_f64(&f64_words(&v)), v);
    }
}
