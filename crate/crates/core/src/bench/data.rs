use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{DataSpec, StreamSpec};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{derive_seed, stream, Rng, RngStreams};
use crate::tasks::{
    class_split_tasks, load_csv, load_idx, split_train_val, LabeledDataset, Regime, Splits, Task, TaskStream,
    TransformSpec,
};

/// Holds out `per_class` rows of every class, chosen by `seed`. Returns
/// `(rest, held_out)`, both in original row order.
pub fn hold_out_per_class(ds: &LabeledDataset, per_class: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut held = vec![false; ds.len()];
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.len() <= per_class {
            return Err(Error::InsufficientClass {
                class,
                available: idx.len(),
                requested: per_class + 1,
            });
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..per_class] {
            held[i] = true;
        }
    }
    let (out, rest): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| held[i]);
    Ok((
        ds.subset(&rest, ds.provenance.clone()),
        ds.subset(&out, format!("{}|test", ds.provenance)),
    ))
}

fn cap_per_class(ds: &LabeledDataset, cap: usize) -> LabeledDataset {
    let mut keep = Vec::new();
    for idx in ds.class_indices() {
        keep.extend(idx.into_iter().take(cap));
    }
    keep.sort_unstable();
    ds.subset(&keep, format!("{}|cap{cap}", ds.provenance))
}

/// Gaussian noise around uniform random class prototypes, clamped to `[0,1]`.
pub fn synthetic_dataset(classes: usize, dim: usize, per_class: usize, noise: f64, proto_seed: u64, sample_seed: u64) -> Result<LabeledDataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::Config("synthetic data needs positive classes, dim and counts".into()));
    }
    let mut prng = Rng::seed_from_u64(proto_seed);
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rand::Rng::gen::<f64>(&mut prng)).collect())
        .collect();
    let mut srng = Rng::seed_from_u64(sample_seed);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for i in 0..per_class * classes {
        let c = i % classes;
        for &p in &protos[c] {
            let e: f64 = StandardNormal.sample(&mut srng);
            data.push((p + noise * e).clamp(0.0, 1.0) as f32);
        }
        labels.push(c);
    }
    LabeledDataset::new(
        Tensor::matrix(classes * per_class, dim, data)?,
        labels,
        classes,
        format!("synthetic(k={classes},d={dim},seed={proto_seed})"),
    )
}

/// Base train/val/test split. Depends only on the data spec and `split_seed`.
pub fn load_splits(spec: &DataSpec, split_seed: u64) -> Result<Splits> {
    let test_seed = derive_seed(split_seed, &[stream::SPLIT, "test"]);
    let val_seed = derive_seed(split_seed, &[stream::SPLIT, "val"]);
    let (pool, test) = match spec {
        DataSpec::Idx {
            images,
            labels,
            test_images,
            test_labels,
            test_per_class,
            train_per_class,
            ..
        } => {
            let all = load_idx(images, labels)?;
            let (pool, test) = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => (all, load_idx(ti, tl)?),
                (None, None) => hold_out_per_class(&all, *test_per_class, test_seed)?,
                _ => return Err(Error::Config("data.test_images and data.test_labels go together".into())),
            };
            let pool = match train_per_class {
                Some(cap) => cap_per_class(&pool, *cap),
                None => pool,
            };
            (pool, test)
        }
        DataSpec::Csv { path, test_per_class, .. } => hold_out_per_class(&load_csv(path)?, *test_per_class, test_seed)?,
        DataSpec::Synthetic {
            classes,
            dim,
            train_per_class,
            test_per_class,
            noise,
            ..
        } => {
            let proto = derive_seed(split_seed, &["synthetic", "prototypes"]);
            let pool = synthetic_dataset(*classes, *dim, *train_per_class, *noise, proto, derive_seed(split_seed, &["synthetic", "train"]))?;
            let test = synthetic_dataset(*classes, *dim, *test_per_class, *noise, proto, derive_seed(split_seed, &["synthetic", "test"]))?;
            (pool, test)
        }
    };
    if test.class_count != pool.class_count || test.dim() != pool.dim() {
        return Err(Error::Config("train and test data disagree in width or class count".into()));
    }
    let (train, val) = split_train_val(&pool, spec.val_fraction(), val_seed)?;
    Ok(Splits { train, val, test })
}

/// Turns the base split into the task sequence of one run. Task
/// transforms are drawn from the run seed.
pub fn build_stream(splits: &Splits, spec: &StreamSpec, streams: &RngStreams) -> Result<TaskStream> {
    let task_seed = |t: usize| streams.child_seed(stream::TASKS, t);
    let transforms: Vec<TransformSpec> = match spec {
        StreamSpec::ClassSplit { n_tasks } => return class_split_tasks(splits, *n_tasks, task_seed(0)),
        StreamSpec::Permuted { n_tasks } => (0..*n_tasks).map(|t| TransformSpec::Permutation { seed: task_seed(t) }).collect(),
        StreamSpec::Nonlinear { n_tasks, layers, alpha } => (0..*n_tasks)
            .map(|t| TransformSpec::NonlinearMlp {
                seed: task_seed(t),
                alpha: *alpha,
                layers: *layers,
            })
            .collect(),
        StreamSpec::Repeated { n_tasks } => vec![TransformSpec::Identity; *n_tasks],
        StreamSpec::ColorSpaces { spaces } => spaces.iter().map(|&space| TransformSpec::ColorSpace { space }).collect(),
    };
    let tasks = transforms
        .into_iter()
        .enumerate()
        .map(|(id, tf)| {
            let [train, val, test] = tf.apply(&splits.train, &splits.val, &splits.test)?;
            Ok(Task {
                id,
                head: 0,
                train,
                val,
                test,
                classes: None,
                description: tf.label(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskStream {
        tasks,
        regime: Regime::FixedOutput,
    })
}
