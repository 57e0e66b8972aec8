use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory::{GradientProbe, MemoryBudget, SelectionStrategy};
use crate::methods::{LrSchedule, MethodConfig, MethodKind};
use crate::nn::{Activation, InitScheme, MlpSpec, OptimizerSpec};
use crate::tasks::ColorSpace;

/// Where the base images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    /// IDX image/label pair. Without a separate test pair, `test_per_class`
    /// examples of each class are held out as the test split.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        /// Caps the training pool per class (after the test hold-out).
        #[serde(default)]
        train_per_class: Option<usize>,
    },
    /// `label,x1,...,xd` rows.
    Csv {
        path: PathBuf,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// Noisy class prototypes in `[0,1]^dim`; used for quick runs and tests.
    Synthetic {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
}

fn default_test_per_class() -> usize {
    100
}
fn default_val_fraction() -> f64 {
    1.0 / 12.0
}
fn default_noise() -> f64 {
    0.15
}

impl DataSpec {
    pub fn val_fraction(&self) -> f64 {
        match self {
            DataSpec::Idx { val_fraction, .. }
            | DataSpec::Csv { val_fraction, .. }
            | DataSpec::Synthetic { val_fraction, .. } => *val_fraction,
        }
    }

    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(images);
                fix(labels);
                test_images.iter_mut().for_each(fix);
                test_labels.iter_mut().for_each(fix);
            }
            DataSpec::Csv { path, .. } => fix(path),
            DataSpec::Synthetic { .. } => {}
        }
    }
}

/// How the base data becomes a sequence of tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSpec {
    /// A fresh pixel permutation per task, one shared output head.
    Permuted { n_tasks: usize },
    /// A fresh invertible leaky-ReLU network per task, one shared head.
    Nonlinear {
        n_tasks: usize,
        #[serde(default = "default_nl_layers")]
        layers: usize,
        #[serde(default = "default_nl_alpha")]
        alpha: f64,
    },
    /// The same untransformed task repeated, one shared head.
    Repeated { n_tasks: usize },
    /// Disjoint class groups, one head per task.
    ClassSplit { n_tasks: usize },
    /// One color encoding per task, one shared head.
    ColorSpaces { spaces: Vec<ColorSpace> },
}

fn default_nl_layers() -> usize {
    4
}
fn default_nl_alpha() -> f64 {
    0.2
}

impl StreamSpec {
    pub fn n_tasks(&self) -> usize {
        match self {
            StreamSpec::Permuted { n_tasks }
            | StreamSpec::Nonlinear { n_tasks, .. }
            | StreamSpec::Repeated { n_tasks }
            | StreamSpec::ClassSplit { n_tasks } => *n_tasks,
            StreamSpec::ColorSpaces { spaces } => spaces.len(),
        }
    }

    pub fn is_multi_head(&self) -> bool {
        matches!(self, StreamSpec::ClassSplit { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub init: InitScheme,
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub schedule: LrSchedule,
}

fn default_batch() -> usize {
    128
}
fn default_optimizer() -> OptimizerSpec {
    OptimizerSpec::adam(1e-4, 1e-4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub budget: MemoryBudget,
    #[serde(default)]
    pub selection: SelectionStrategy,
    #[serde(default)]
    pub probe: GradientProbe,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            budget: MemoryBudget::PerTask { count: 0 },
            selection: SelectionStrategy::Random,
            probe: GradientProbe::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Also train the joint multi-task reference and report forgetting ratios.
    #[serde(default)]
    pub joint_reference: bool,
    /// Record first-task test accuracy after every epoch.
    #[serde(default)]
    pub first_task_per_epoch: bool,
    /// Emit prediction heatmaps and logit statistics.
    #[serde(default = "yes")]
    pub figures: bool,
}

fn yes() -> bool {
    true
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            joint_reference: false,
            first_task_per_epoch: false,
            figures: true,
        }
    }
}

/// One arm of an experiment: everything needed to reproduce a run given a
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSpec,
    pub stream: StreamSpec,
    pub model: ModelConfig,
    pub method: MethodConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Seed of the test hold-out, shared by all runs so every seed is scored
    /// on the same test images.
    #[serde(default)]
    pub split_seed: u64,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Cartesian product of arms run from one config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ArmGrid {
    #[serde(default)]
    pub methods: Vec<MethodKind>,
    #[serde(default)]
    pub memory: Vec<MemoryBudget>,
    #[serde(default)]
    pub selection: Vec<SelectionStrategy>,
}

/// An experiment config file: the base arm plus an optional grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentFile {
    #[serde(flatten)]
    pub base: ExperimentConfig,
    #[serde(default)]
    pub grid: Option<ArmGrid>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stream.n_tasks() == 0 {
            return bad("stream must contain at least one task".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("train.epochs and train.batch_size must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.model.hidden.contains(&0) {
            return bad("model.hidden widths must be positive".into());
        }
        self.model.activation.validate()?;
        self.method.validate()?;
        self.train
            .optimizer
            .validate()
            .map_err(|e| Error::Config(format!("train.optimizer: {e}")))?;
        if let LrSchedule::Plateau { factor, .. } = self.train.schedule {
            if !(factor > 0.0 && factor <= 1.0) {
                return bad(format!("train.schedule.factor must be in (0,1], got {factor}"));
            }
        }
        let vf = self.data.val_fraction();
        if !(vf > 0.0 && vf < 1.0) {
            return bad(format!("data.val_fraction must be in (0,1), got {vf}"));
        }
        if self.method.kind.uses_memory() && self.memory.budget == (MemoryBudget::PerTask { count: 0 }) {
            return bad(format!("method {} needs memory.budget", self.method.kind));
        }
        Ok(())
    }

    /// Model architecture for inputs of width `d` and the given heads.
    pub fn mlp_spec(&self, d: usize, heads: Vec<usize>) -> MlpSpec {
        MlpSpec {
            input: d,
            hidden: self.model.hidden.clone(),
            heads,
            activation: self.model.activation,
            init: self.model.init,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short arm label such as `fsr_logit-per_task500-random`.
    pub fn arm_label(&self) -> String {
        let mem = match self.memory.budget {
            MemoryBudget::PerTask { count } => format!("per_task{count}"),
            MemoryBudget::PerClass { count } => format!("per_class{count}"),
            MemoryBudget::EwcEquivalent => "ewc_equiv".into(),
        };
        if self.method.kind.uses_memory() {
            format!("{}-{mem}-{}", self.method.kind, self.memory.selection.name())
        } else {
            self.method.kind.name().to_string()
        }
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config, applies `key.path=value` overrides and resolves
    /// paths relative to the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut file: ExperimentFile = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            file.base.data.rebase(dir);
        }
        file.base.validate()?;
        Ok(file)
    }

    /// Every arm of the grid, each a complete config. Without a grid the
    /// base config is the single arm.
    pub fn arms(&self) -> Result<Vec<ExperimentConfig>> {
        let Some(grid) = &self.grid else {
            return Ok(vec![self.base.clone()]);
        };
        let methods = if grid.methods.is_empty() {
            vec![None]
        } else {
            grid.methods.iter().copied().map(Some).collect()
        };
        let budgets = if grid.memory.is_empty() {
            vec![None]
        } else {
            grid.memory.iter().copied().map(Some).collect()
        };
        let selections = if grid.selection.is_empty() {
            vec![None]
        } else {
            grid.selection.iter().copied().map(Some).collect()
        };
        let mut out: Vec<ExperimentConfig> = Vec::new();
        for m in &methods {
            for b in &budgets {
                for s in &selections {
                    let mut arm = self.base.clone();
                    if let Some(kind) = m {
                        if *kind != arm.method.kind {
                            arm.method = MethodConfig {
                                kind: *kind,
                                lambda: kind.default_lambda(),
                                ..arm.method
                            };
                        }
                    }
                    if let Some(b) = b {
                        arm.memory.budget = *b;
                    }
                    if let Some(s) = s {
                        arm.memory.selection = *s;
                    }
                    // Memory and selection axes collapse for memory-free methods.
                    if !arm.method.kind.uses_memory() && out.iter().any(|o| o.arm_label() == arm.arm_label()) {
                        continue;
                    }
                    arm.validate()?;
                    out.push(arm);
                }
            }
        }
        Ok(out)
    }
}

/// Sets `dotted.key=value` in a TOML table. The value is parsed as a TOML
/// value when possible and otherwise taken as a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override '{assignment}' has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{seg}' is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"
name = "toy"
seeds = [1, 2]

[data]
source = "synthetic"
classes = 4
dim = 6
train_per_class = 20
test_per_class = 5

[stream]
kind = "permuted"
n_tasks = 2

[model]
hidden = [8]

[method]
kind = "fsr_logit"
lambda = 5.0

[train]
epochs = 2

[memory]
budget = { kind = "per_class", count = 2 }
"#;

    #[test]
    fn parses_with_defaults() {
        let f = ExperimentFile::parse(TOY).unwrap();
        let c = &f.base;
        c.validate().unwrap();
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.train.optimizer, OptimizerSpec::adam(1e-4, 1e-4));
        assert_eq!(c.method.tau, 2.0);
        assert_eq!(c.arm_label(), "fsr_logit-per_class2-random");
        assert_eq!(f.arms().unwrap().len(), 1);
    }

    #[test]
    fn override_changes_one_field() {
        let mut t: toml::Table = TOY.parse().unwrap();
        apply_override(&mut t, "method.lambda=7.5").unwrap();
        apply_override(&mut t, "memory.selection=herding").unwrap();
        let f: ExperimentFile = t.clone().try_into().unwrap();
        let base = ExperimentFile::parse(TOY).unwrap().base;
        assert_eq!(f.base.method.lambda, 7.5);
        assert_eq!(f.base.memory.selection, SelectionStrategy::Herding);
        let mut expect = base.clone();
        expect.method.lambda = 7.5;
        expect.memory.selection = SelectionStrategy::Herding;
        assert_eq!(f.base, expect);
        assert!(apply_override(&mut t, "nokey").is_err());
        assert!(apply_override(&mut t, "name.x=1").is_err());
    }

    #[test]
    fn grid_expands_and_collapses() {
        let text = format!(
            "{TOY}\n[grid]\nmethods = [\"naive\", \"fsr_logit\", \"ewc\"]\nmemory = [{{ kind = \"per_class\", count = 1 }}, {{ kind = \"per_class\", count = 2 }}]\n"
        );
        let arms = ExperimentFile::parse(&text).unwrap().arms().unwrap();
        let labels: Vec<String> = arms.iter().map(ExperimentConfig::arm_label).collect();
        assert_eq!(
            labels,
            vec!["naive", "fsr_logit-per_class1-random", "fsr_logit-per_class2-random", "ewc"]
        );
        assert_eq!(arms[3].method.lambda, 400.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentFile::parse(TOY).unwrap().base;
        c.method.lambda = -1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentFile::parse(TOY).unwrap().base;
        c.memory.budget = MemoryBudget::PerTask { count: 0 };
        assert!(c.validate().is_err());
        assert!(ExperimentFile::parse("name = 3").is_err());
    }
}
