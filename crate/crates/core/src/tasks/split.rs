use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Class-stratified hold-out split. From every class,
/// `round(n_c * val_fraction)` examples (at least one, at most `n_c - 1`) go
/// to the validation side. Both outputs keep the original row order.
pub fn split_train_val(
    ds: &LabeledDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!("val_fraction must be in (0,1), got {val_fraction}")));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut is_val = vec![false; ds.len()];
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::InsufficientClass {
                class,
                available: idx.len(),
                requested: 2,
            });
        }
        let take = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len() - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..take] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_val[i]);
    Ok((
        ds.subset(&train, format!("{}|train", ds.provenance)),
        ds.subset(&val, format!("{}|val", ds.provenance)),
    ))
}

/// Shuffles `0..class_count` and cuts it into `n_tasks` equal groups.
pub fn partition_classes(class_count: usize, n_tasks: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_tasks == 0 || class_count % n_tasks != 0 {
        return Err(Error::invalid(format!(
            "{class_count} classes cannot be split evenly into {n_tasks} tasks"
        )));
    }
    let mut classes: Vec<usize> = (0..class_count).collect();
    classes.shuffle(&mut Rng::seed_from_u64(seed));
    Ok(classes.chunks(class_count / n_tasks).map(<[usize]>::to_vec).collect())
}

/// Rows whose label is in `classes`, relabelled to the position of that label
/// within `classes`.
pub fn restrict_to_classes(ds: &LabeledDataset, classes: &[usize]) -> LabeledDataset {
    let mut map = vec![None; ds.class_count];
    for (new, &old) in classes.iter().enumerate() {
        map[old] = Some(new);
    }
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| map[ds.labels[i]].is_some()).collect();
    let mut out = ds.subset(&rows, format!("{}|classes{classes:?}", ds.provenance));
    out.labels = rows.iter().map(|&i| map[ds.labels[i]].expect("filtered")).collect();
    out.class_count = classes.len();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every task shares one output space and one head.
    FixedOutput,
    /// Each task brings disjoint classes and its own head.
    ClassIncremental,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    pub head: usize,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    /// Original class ids, for class-incremental tasks.
    pub classes: Option<Vec<usize>>,
    pub description: String,
}

impl Task {
    pub fn class_count(&self) -> usize {
        self.train.class_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub regime: Regime,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn head_widths(&self) -> Vec<usize> {
        match self.regime {
            Regime::FixedOutput => vec![self.tasks.first().map_or(0, Task::class_count)],
            Regime::ClassIncremental => self.tasks.iter().map(Task::class_count).collect(),
        }
    }
}

/// Base data split three ways.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Class-incremental stream: classes shuffled by `seed`, cut into
/// `n_tasks` disjoint groups, labels remapped per task.
pub fn class_split_tasks(splits: &Splits, n_tasks: usize, seed: u64) -> Result<TaskStream> {
    let groups = partition_classes(splits.train.class_count, n_tasks, seed)?;
    let tasks = groups
        .into_iter()
        .enumerate()
        .map(|(id, classes)| Task {
            id,
            head: id,
            train: restrict_to_classes(&splits.train, &classes),
            val: restrict_to_classes(&splits.val, &classes),
            test: restrict_to_classes(&splits.test, &classes),
            description: format!("classes {classes:?}"),
            classes: Some(classes),
        })
        .collect();
    Ok(TaskStream {
        tasks,
        regime: Regime::ClassIncremental,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn per_class(n: usize, k: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..n * k).map(|i| i % k).collect();
        let data = (0..n * k).map(|i| i as f32 / (n * k) as f32).collect();
        LabeledDataset::new(Tensor::matrix(n * k, 1, data).unwrap(), labels, k, "toy").unwrap()
    }

    #[test]
    fn stratified_val_split() {
        let ds = per_class(100, 10);
        let (train, val) = split_train_val(&ds, 0.1, 4).unwrap();
        assert!(val.class_counts().iter().all(|&c| c == 10));
        assert_eq!(train.len() + val.len(), ds.len());
        let mut seen: Vec<f32> = train.inputs.data().iter().chain(val.inputs.data()).copied().collect();
        seen.sort_by(f32::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), ds.len());
        assert_eq!(split_train_val(&ds, 0.1, 4).unwrap().1, val);
        assert!(split_train_val(&ds, 1.0, 4).is_err());
    }

    #[test]
    fn tiny_class_is_rejected() {
        let ds = LabeledDataset::new(Tensor::matrix(3, 1, vec![0.0, 0.5, 1.0]).unwrap(), vec![0, 0, 1], 2, "t").unwrap();
        assert!(matches!(split_train_val(&ds, 0.5, 0), Err(Error::InsufficientClass { class: 1, .. })));
    }

    #[test]
    fn class_partition_is_disjoint_and_exhaustive() {
        let groups = partition_classes(10, 5, 1).unwrap();
        assert_eq!(groups.len(), 5);
        let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(partition_classes(10, 5, 1).unwrap(), groups);
        assert_ne!(partition_classes(10, 5, 2).unwrap(), groups);
        assert!(partition_classes(10, 3, 1).is_err());
    }

    #[test]
    fn class_split_covers_every_example_once() {
        let ds = per_class(4, 10);
        let splits = Splits {
            train: ds.clone(),
            val: ds.clone(),
            test: ds.clone(),
        };
        let stream = class_split_tasks(&splits, 5, 3).unwrap();
        assert_eq!(stream.regime, Regime::ClassIncremental);
        let total: usize = stream.tasks.iter().map(|t| t.train.len()).sum();
        assert_eq!(total, ds.len());
        for t in &stream.tasks {
            assert_eq!(t.class_count(), 2);
            assert!(t.train.labels.iter().all(|&y| y < 2));
        }
    }
}
