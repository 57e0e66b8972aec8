//! How many examples per task fit in the storage EWC spends on its anchor
//! parameters and Fisher diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    /// Inputs kept as 32-bit floats: one float per input value.
    #[default]
    Float32,
    /// Inputs kept as bytes: four input values per float-sized slot.
    Uint8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    /// Weight count, biases excluded.
    pub params: u64,
    /// `2 * params`: anchor parameters plus Fisher diagonal.
    pub ewc_floats: u64,
    /// Float-sized slots per stored example: input plus `K` logits.
    pub floats_per_image: f64,
    pub n_tasks: u64,
    /// `floor(ewc_floats / floats_per_image / n_tasks)`.
    pub images_per_task: u64,
    /// The same quotient before flooring.
    pub exact_images_per_task: f64,
    pub storage: StorageMode,
}

pub fn ewc_equivalent_budget(params: u64, d: u64, k: u64, n_tasks: u64) -> Result<BudgetReport> {
    ewc_equivalent_budget_with(params, d, k, n_tasks, StorageMode::Float32)
}

pub fn ewc_equivalent_budget_with(
    params: u64,
    d: u64,
    k: u64,
    n_tasks: u64,
    storage: StorageMode,
) -> Result<BudgetReport> {
    if params == 0 || d == 0 || k == 0 || n_tasks == 0 {
        return Err(Error::invalid("budget inputs must all be positive"));
    }
    let ewc_floats = 2 * params;
    let (images_per_task, floats_per_image) = match storage {
        StorageMode::Float32 => {
            let per = d + k;
            (ewc_floats / per / n_tasks, per as f64)
        }
        StorageMode::Uint8 => {
            // Work in bytes: 4 per float slot, 1 per input value.
            let per_bytes = d + 4 * k;
            (4 * ewc_floats / per_bytes / n_tasks, per_bytes as f64 / 4.0)
        }
    };
    Ok(BudgetReport {
        params,
        ewc_floats,
        floats_per_image,
        n_tasks,
        images_per_task,
        exact_images_per_task: ewc_floats as f64 / floats_per_image / n_tasks as f64,
        storage,
    })
}

/// Layer shapes of the benchmark models, weights only.
pub const MNIST_MLP: &str = "784x1024,1024x1024,1024x1024,1024x1024,1024x10";
pub const CIFAR10_VGG: &str = "5x5x3x128,5x5x128x128,5x5x128x256,5x5x256x256,3x3x256x512,3x3x512x512,3x3x512x1024,3x3x1024x1024,4096x1024,1024x10";

/// Parses a model description into a weight count (biases ignored).
///
/// Accepted forms:
/// - a preset: `mnist-mlp`, `cifar10-vgg`
/// - `params:N` with `N` an integer or a decimal with `k`/`M` suffix (`6.8M`)
/// - `mlp:784-256-256-10`, widths of consecutive dense layers
/// - comma-separated layers, each a product of dimensions (`5x5x3x128,4096x1024`)
pub fn parse_param_spec(spec: &str) -> Result<u64> {
    let spec = spec.trim();
    let bad = |why: &str| Error::invalid(format!("model spec '{spec}': {why}"));
    match spec {
        "mnist-mlp" => return parse_param_spec(MNIST_MLP),
        "cifar10-vgg" => return parse_param_spec(CIFAR10_VGG),
        _ => {}
    }
    if let Some(n) = spec.strip_prefix("params:") {
        let n = n.trim();
        let (num, mult) = match n.chars().last() {
            Some('M') | Some('m') => (&n[..n.len() - 1], 1e6),
            Some('k') | Some('K') => (&n[..n.len() - 1], 1e3),
            _ => (n, 1.0),
        };
        let v: f64 = num.parse().map_err(|_| bad("bad parameter count"))?;
        let total = (v * mult).round();
        if !(total >= 1.0) {
            return Err(bad("parameter count must be positive"));
        }
        return Ok(total as u64);
    }
    if let Some(widths) = spec.strip_prefix("mlp:") {
        let w = widths
            .split('-')
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad("bad width")))
            .collect::<Result<Vec<_>>>()?;
        if w.len() < 2 || w.contains(&0) {
            return Err(bad("need at least two positive widths"));
        }
        return Ok(w.windows(2).map(|p| p[0] * p[1]).sum());
    }
    let mut total = 0u64;
    for layer in spec.split(',') {
        let dims = layer
            .split('x')
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad("bad dimension")))
            .collect::<Result<Vec<_>>>()?;
        if dims.contains(&0) {
            return Err(bad("zero dimension"));
        }
        total += dims.iter().product::<u64>();
    }
    if total == 0 {
        return Err(bad("empty"));
    }
    Ok(total)
}

/// Memory size policy of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryBudget {
    /// Fixed number of entries per task, spread evenly over classes.
    PerTask { count: usize },
    /// Fixed number of entries per class.
    PerClass { count: usize },
    /// As many entries per task as EWC's storage would buy.
    EwcEquivalent,
}

impl MemoryBudget {
    /// Entries per task for the given model/data sizes.
    pub fn per_task(&self, class_count: usize, weights: u64, d: usize, n_tasks: usize) -> Result<usize> {
        Ok(match *self {
            MemoryBudget::PerTask { count } => count,
            MemoryBudget::PerClass { count } => count * class_count,
            MemoryBudget::EwcEquivalent => {
                ewc_equivalent_budget(weights, d as u64, class_count as u64, n_tasks as u64)?.images_per_task as usize
            }
        })
    }

    /// Splits the per-task total over classes; the first `total % K`
    /// classes get one extra entry.
    pub fn per_class_counts(&self, class_count: usize, weights: u64, d: usize, n_tasks: usize) -> Result<Vec<usize>> {
        let total = self.per_task(class_count, weights, d, n_tasks)?;
        let (base, extra) = (total / class_count, total % class_count);
        Ok((0..class_count).map(|c| base + usize::from(c < extra)).collect())
    }
}
