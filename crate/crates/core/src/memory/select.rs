//! Choosing which examples of a task enter the episodic memory.
//!
//! Every strategy is class-stratified and breaks ties by lowest row index.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Model, OptimizerSpec, OptimizerState, Tensor};
use crate::rng::Rng;
use crate::tasks::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    #[default]
    Random,
    Herding,
    Gradient,
}

impl SelectionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::Random => "random",
            SelectionStrategy::Herding => "herding",
            SelectionStrategy::Gradient => "gradient",
        }
    }
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "rand" => Ok(Self::Random),
            "herding" | "herd" => Ok(Self::Herding),
            "gradient" | "grad" => Ok(Self::Gradient),
            _ => Err(Error::invalid(format!("unknown selection strategy '{s}' (random, herding, gradient)"))),
        }
    }
}

fn check_counts(ds: &LabeledDataset, counts: &[usize]) -> Result<Vec<Vec<usize>>> {
    if counts.len() != ds.class_count {
        return Err(Error::shape("per-class counts", ds.class_count, counts.len()));
    }
    let by_class = ds.class_indices();
    for (class, (idx, &want)) in by_class.iter().zip(counts).enumerate() {
        if idx.len() < want {
            return Err(Error::InsufficientClass {
                class,
                available: idx.len(),
                requested: want,
            });
        }
    }
    Ok(by_class)
}

/// Uniform sampling without replacement of `counts[c]` rows from each class
/// `c`. Output is class-major, ascending within a class.
pub fn select_stratified_random(ds: &LabeledDataset, counts: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
    let by_class = check_counts(ds, counts)?;
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (idx, &want) in by_class.iter().zip(counts) {
        let mut picked: Vec<usize> = index::sample(rng, idx.len(), want).into_iter().map(|p| idx[p]).collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// Greedy kernel herding with the linear kernel over raw input vectors.
///
/// At step `t` (0-based) the unchosen candidate `x` minimizing
/// `||mu - (S_t + x) / (t + 1)||` is taken, where `mu` is the candidate mean
/// and `S_t` the sum of the picks so far; the running estimate is thus
/// updated as `w <- w + (x - w) / (t + 1)`. Returns picks in order and the
/// final running estimate.
pub fn select_herding(inputs: &Tensor<f32>, candidates: &[usize], m: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if m > candidates.len() {
        return Err(Error::invalid(format!(
            "herding: {m} requested from {} candidates",
            candidates.len()
        )));
    }
    let d = inputs.cols();
    let n = candidates.len();
    let xs: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&i| inputs.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect();
    let norms: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
    let mut mean = vec![0.0; d];
    for x in &xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n.max(1) as f64);

    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(m);
    let mut sum = vec![0.0; d];
    let mut running = vec![0.0; d];
    for t in 0..m {
        let k = (t + 1) as f64;
        // ||mu - (S + x)/k||^2 = const - (2/k) <mu - S/k, x> + ||x||^2 / k^2
        let w: Vec<f64> = mean.iter().zip(&sum).map(|(mu, s)| mu - s / k).collect();
        let mut best: Option<(usize, f64)> = None;
        for (j, x) in xs.iter().enumerate() {
            if chosen[j] {
                continue;
            }
            let dot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let score = norms[j] / (k * k) - 2.0 * dot / k;
            if best.map_or(true, |(_, s)| score < s) {
                best = Some((j, score));
            }
        }
        let (j, _) = best.expect("m <= n");
        chosen[j] = true;
        picks.push(candidates[j]);
        for ((s, r), v) in sum.iter_mut().zip(running.iter_mut()).zip(&xs[j]) {
            *s += v;
            *r += (v - *r) / k;
        }
    }
    Ok((picks, running))
}

pub fn select_herding_stratified(ds: &LabeledDataset, counts: &[usize]) -> Result<Vec<usize>> {
    let by_class = check_counts(ds, counts)?;
    let mut out = Vec::new();
    for (idx, &want) in by_class.iter().zip(counts) {
        out.extend(select_herding(&ds.inputs, idx, want)?.0);
    }
    Ok(out)
}

/// Settings of the throwaway model trained to score examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
}

impl Default for GradientProbe {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 128,
            optimizer: OptimizerSpec::adam(1e-4, 1e-4),
        }
    }
}

/// Per-example L2 norm of the parameter gradient of that example's own
/// cross-entropy, evaluated at the current model.
pub fn example_gradient_norms(model: &Model, ds: &LabeledDataset, head: usize, chunk: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.len());
    let rows: Vec<usize> = (0..ds.len()).collect();
    for part in rows.chunks(chunk.max(1)) {
        let x = ds.inputs.select_rows(part);
        let y: Vec<usize> = part.iter().map(|&i| ds.labels[i]).collect();
        let (z, cache) = model.forward(&x, head)?;
        let (_, g) = cross_entropy(&z, &y)?;
        let (_, norms) = model.backward_with_example_norms(&cache, &g, part.len() as f32)?;
        out.extend(norms.into_iter().map(f64::from));
    }
    Ok(out)
}

/// Scores examples by their mean per-example gradient norm over
/// `probe.epochs` epochs of training a copy of `model`: after each epoch the
/// norm of every example is recorded. The `counts[c]` lowest-scoring
/// examples of each class are selected. `model` itself is not modified.
pub fn select_gradient_based(
    model: &Model,
    ds: &LabeledDataset,
    head: usize,
    counts: &[usize],
    probe: &GradientProbe,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if probe.epochs == 0 {
        return Err(Error::invalid("gradient probe needs at least one epoch"));
    }
    let by_class = check_counts(ds, counts)?;
    let mut probe_model = model.clone();
    let mut opt = OptimizerState::new(probe.optimizer, &probe_model)?;
    let mut scores = vec![0.0; ds.len()];
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for _ in 0..probe.epochs {
        order.shuffle(rng);
        for batch in order.chunks(probe.batch_size.max(1)) {
            let x = ds.inputs.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| ds.labels[i]).collect();
            let (z, cache) = probe_model.forward(&x, head)?;
            let (_, g) = cross_entropy(&z, &y)?;
            let grads = probe_model.backward(&cache, &g)?;
            opt.step(&mut probe_model, &grads)?;
        }
        let norms = example_gradient_norms(&probe_model, ds, head, 512)?;
        for (s, n) in scores.iter_mut().zip(norms) {
            *s += n;
        }
    }
    scores.iter_mut().for_each(|s| *s /= probe.epochs as f64);
    let mut out = Vec::new();
    for (idx, &want) in by_class.iter().zip(counts) {
        let mut ranked = idx.clone();
        ranked.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut picked = ranked[..want].to_vec();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok((out, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ds_from(rows: &[[f32; 2]], labels: Vec<usize>, k: usize) -> LabeledDataset {
        LabeledDataset::new(Tensor::from_rows(rows).unwrap(), labels, k, "toy").unwrap()
    }

    #[test]
    fn random_selection_properties() {
        let rows: Vec<[f32; 2]> = (0..40).map(|i| [i as f32 / 40.0, 0.0]).collect();
        let ds = ds_from(&rows, (0..40).map(|i| i % 10).collect(), 10);
        let mut rng = Rng::seed_from_u64(1);
        let one = select_stratified_random(&ds, &[1; 10], &mut rng).unwrap();
        assert_eq!(one.len(), 10);
        let mut classes: Vec<usize> = one.iter().map(|&i| ds.labels[i]).collect();
        classes.sort();
        assert_eq!(classes, (0..10).collect::<Vec<_>>());
        let all = select_stratified_random(&ds, &[4; 10], &mut rng).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..40).collect::<Vec<_>>());
        let a = select_stratified_random(&ds, &[2; 10], &mut Rng::seed_from_u64(5)).unwrap();
        let b = select_stratified_random(&ds, &[2; 10], &mut Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let err = select_stratified_random(&ds, &[5; 10], &mut rng).unwrap_err();
        assert!(matches!(err, Error::InsufficientClass { class: 0, available: 4, requested: 5 }));
    }

    #[test]
    fn herding_first_pick_is_nearest_mean() {
        let rows = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.3, 0.4], [1.0, 1.0]];
        let ds = ds_from(&rows, vec![0; 5], 1);
        let (p, _) = select_herding(&ds.inputs, &[0, 1, 2, 3, 4], 1).unwrap();
        // mean = (0.46, 0.48)
        assert_eq!(p, vec![3]);
    }

    #[test]
    fn herding_identical_examples() {
        let rows = [[0.25, 0.75]; 4];
        let ds = ds_from(&rows, vec![0; 4], 1);
        let (p, w) = select_herding(&ds.inputs, &[0, 1, 2, 3], 3).unwrap();
        assert_eq!(p, vec![0, 1, 2]);
        assert_eq!(w, vec![0.25, 0.75]);
        assert!(select_herding(&ds.inputs, &[0, 1], 3).is_err());
    }

    #[test]
    fn herding_full_population_is_permutation() {
        let rows: Vec<[f32; 2]> = (0..9).map(|i| [(i * 7 % 9) as f32 / 9.0, (i % 4) as f32 / 4.0]).collect();
        let ds = ds_from(&rows, vec![0; 9], 1);
        let cands: Vec<usize> = (0..9).collect();
        let (mut p, _) = select_herding(&ds.inputs, &cands, 9).unwrap();
        p.sort();
        assert_eq!(p, cands);
    }
}
