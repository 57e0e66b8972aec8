use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::{evaluate, EpochMetrics};
use crate::nn::{softmax, Model};
use crate::tasks::LabeledDataset;

/// Everything measured during one sequential run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsLog {
    /// `accuracy[t][j]`: test accuracy on task `j` after training task `t`,
    /// defined for `j <= t`.
    pub accuracy: Vec<Vec<f64>>,
    /// `test_loss[t][j]`, same layout.
    pub test_loss: Vec<Vec<f64>>,
    /// Per-task epoch curves.
    pub epochs: Vec<Vec<EpochMetrics>>,
    /// `(task, epoch, acc)` of the first task, when per-epoch tracking is on.
    pub first_task_epochs: Vec<(usize, usize, f64)>,
    /// `delta[t][j]`: training loss on task `j < t` after task `t` minus the
    /// value recorded at the end of task `j`.
    pub delta: Vec<Vec<f64>>,
    pub task_optima: Vec<f64>,
    pub task_seconds: Vec<f64>,
    pub memory_sizes: Vec<usize>,
}

impl MetricsLog {
    pub fn n_tasks(&self) -> usize {
        self.accuracy.len()
    }

    /// `A[j][t]`, zero-based.
    pub fn acc(&self, j: usize, t: usize) -> Option<f64> {
        self.accuracy.get(t)?.get(j).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for (t, row) in self.accuracy.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::shape(format!("accuracy row {t}"), t + 1, row.len()));
            }
            if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::invalid(format!("accuracy row {t} leaves [0,1]")));
            }
        }
        Ok(())
    }
}

/// `A[0][t]` for every stage.
pub fn first_task_accuracy(log: &MetricsLog) -> Vec<f64> {
    log.accuracy.iter().map(|row| row[0]).collect()
}

/// `(1/t) sum_{j<=t} A[j][t]` for every stage.
pub fn average_accuracy(log: &MetricsLog) -> Vec<f64> {
    log.accuracy
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoReport {
    pub rho: Vec<f64>,
    pub joint: Vec<f64>,
    pub chance: Vec<f64>,
}

/// `rho(t) = (1/t) sum_{j<=t} [(A[j][t] - r_j) / (J_j - r_j) - 1]`.
pub fn forgetting_ratio(log: &MetricsLog, joint: &[f64], chance: &[f64]) -> Result<RhoReport> {
    let n = log.n_tasks();
    if joint.len() < n || chance.len() < n {
        return Err(Error::shape("reference accuracies", n, joint.len().min(chance.len())));
    }
    for j in 0..n {
        if joint[j] <= chance[j] {
            return Err(Error::DegenerateReference {
                task: j,
                joint: joint[j],
                chance: chance[j],
            });
        }
    }
    let rho = log
        .accuracy
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &a)| (a - chance[j]) / (joint[j] - chance[j]) - 1.0)
                .sum::<f64>()
                / row.len() as f64
        })
        .collect();
    Ok(RhoReport {
        rho,
        joint: joint[..n].to_vec(),
        chance: chance[..n].to_vec(),
    })
}

/// Per-true-class mean and (population) standard deviation of every logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitStats {
    /// `mean[c][k]`: mean of logit `k` over examples of class `c`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

fn per_class_rows(model: &Model, ds: &LabeledDataset, head: usize, probs: bool) -> Result<(Vec<Vec<Vec<f64>>>, usize)> {
    let width = model.head_width(head);
    let mut by_class = vec![Vec::new(); ds.class_count];
    let rows: Vec<usize> = (0..ds.len()).collect();
    for part in rows.chunks(1024) {
        let z = model.predict(&ds.inputs.select_rows(part), head)?;
        for (r, &i) in part.iter().enumerate() {
            let v: Vec<f64> = if probs {
                softmax(z.row(r), 1.0)?.into_iter().map(f64::from).collect()
            } else {
                z.row(r).iter().map(|&v| f64::from(v)).collect()
            };
            by_class[ds.labels[i]].push(v);
        }
    }
    Ok((by_class, width))
}

pub fn logit_stats(model: &Model, ds: &LabeledDataset, head: usize) -> Result<LogitStats> {
    let (by_class, width) = per_class_rows(model, ds, head, false)?;
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for rows in &by_class {
        let n = rows.len().max(1) as f64;
        let m: Vec<f64> = (0..width).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let s: Vec<f64> = (0..width)
            .map(|k| (rows.iter().map(|r| (r[k] - m[k]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        mean.push(m);
        std.push(s);
    }
    Ok(LogitStats {
        mean,
        std,
        counts: by_class.iter().map(Vec::len).collect(),
    })
}

/// Row `c`: mean softmax output over the examples of class `c`. Classes
/// without examples get a zero row.
pub fn prediction_heatmap(model: &Model, ds: &LabeledDataset, head: usize) -> Result<Vec<Vec<f64>>> {
    let (by_class, width) = per_class_rows(model, ds, head, true)?;
    Ok(by_class
        .iter()
        .map(|rows| {
            let n = rows.len().max(1) as f64;
            (0..width).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect()
        })
        .collect())
}

/// `L_D(f) - L_D(f_t)` with `L_D(f_t)` recorded when task `t` finished.
pub fn delta_loss(model: &Model, ds: &LabeledDataset, head: usize, stored_optimum: f64) -> Result<f64> {
    Ok(evaluate(model, ds, head)?.0 - stored_optimum)
}

/// Mean and standard error (sample std over `sqrt(n)`; zero for one value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_of(acc: Vec<Vec<f64>>) -> MetricsLog {
        MetricsLog {
            accuracy: acc,
            ..Default::default()
        }
    }

    #[test]
    fn curves() {
        let log = log_of(vec![vec![0.9], vec![0.7, 0.95], vec![0.5, 0.8, 0.9]]);
        log.validate().unwrap();
        assert_eq!(first_task_accuracy(&log), vec![0.9, 0.7, 0.5]);
        let avg = average_accuracy(&log);
        assert!((avg[1] - 0.825).abs() < 1e-12 && (avg[2] - 2.2 / 3.0).abs() < 1e-12);
        assert!(log_of(vec![vec![0.5, 0.5]]).validate().is_err());
    }

    #[test]
    fn rho_endpoints() {
        let joint = [0.9, 0.8];
        let chance = [0.1, 0.1];
        let perfect = log_of(vec![vec![0.9], vec![0.9, 0.8]]);
        assert_eq!(forgetting_ratio(&perfect, &joint, &chance).unwrap().rho, vec![0.0, 0.0]);
        let chance_log = log_of(vec![vec![0.1], vec![0.1, 0.1]]);
        assert_eq!(forgetting_ratio(&chance_log, &joint, &chance).unwrap().rho, vec![-1.0, -1.0]);
        assert!(matches!(
            forgetting_ratio(&perfect, &[0.1, 0.8], &chance),
            Err(Error::DegenerateReference { task: 0, .. })
        ));
    }

    #[test]
    fn stderr() {
        assert_eq!(mean_stderr(&[0.4]), (0.4, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((s - (2.5f64).sqrt() / 5f64.sqrt()).abs() < 1e-15);
    }
}
