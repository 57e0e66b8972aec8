use std::collections::BTreeMap;

use rand::seq::index;

use super::config::{MethodConfig, MethodKind};
use crate::error::{Error, Result};
use crate::memory::{EpisodicMemory, MemoryEntry};
use crate::nn::{cross_entropy, kl_distill, logit_match, sigmoid_ce, Gradients, MultiHeadMlp, Scalar, Tensor};
use crate::rng::Rng;

/// Mean cross-entropy of a labelled batch on `head`.
pub fn task_loss<F: Scalar>(
    model: &MultiHeadMlp<F>,
    x: &Tensor<F>,
    y: &[usize],
    head: usize,
) -> Result<(F, Gradients<F>)> {
    let (z, cache) = model.forward(x, head)?;
    let (loss, g) = cross_entropy(&z, y)?;
    Ok((loss, model.backward(&cache, &g)?))
}

/// Draws `min(replay_batch, |memory|)` distinct entries uniformly over the
/// whole memory; `None` returns every entry.
pub fn sample_replay<'a>(entries: &[&'a MemoryEntry], replay_batch: Option<usize>, rng: &mut Rng) -> Vec<&'a MemoryEntry> {
    match replay_batch {
        Some(b) if b < entries.len() => {
            let mut picks = index::sample(rng, entries.len(), b).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| entries[i]).collect()
        }
        _ => entries.to_vec(),
    }
}

/// The memory term of the replaying kinds, averaged over `entries`:
///
/// - `fsr_logit`: `lambda * mean ||z - z_ref||^2`
/// - `fsr_distill`: `lambda * mean KL_tau(z_ref || z)`
/// - `fsr_logit_lab`: the logit term plus `lambda_lab * mean CE(z, y)`
/// - `icarl_reg`: `lambda * mean sum_k CE(g(z_ref_k), g(z_k))`
///
/// Each entry is evaluated on the head it was recorded from.
pub fn memory_penalty<F: Scalar>(
    cfg: &MethodConfig,
    model: &MultiHeadMlp<F>,
    entries: &[&MemoryEntry],
) -> Result<(F, Gradients<F>)> {
    if !cfg.kind.uses_memory() {
        return Err(Error::invalid(format!("{} has no memory term", cfg.kind)));
    }
    if entries.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let inv_m = 1.0 / entries.len() as f64;
    let lambda = F::of(cfg.lambda * inv_m);
    let lambda_lab = F::of(cfg.lambda_lab() * inv_m);
    let tau = F::of(cfg.tau);

    let mut by_head: BTreeMap<usize, Vec<&MemoryEntry>> = BTreeMap::new();
    for e in entries {
        by_head.entry(e.head_id).or_default().push(e);
    }
    let mut total = F::zero();
    let mut grads = Gradients::zeros(model);
    for (head, group) in by_head {
        if head >= model.head_count() {
            return Err(Error::invalid(format!("memory entry refers to head {head}, model has {}", model.head_count())));
        }
        let width = model.head_width(head);
        if let Some(e) = group.iter().find(|e| e.logits.len() != width) {
            return Err(Error::shape(format!("memory logits of task {} on head {head}", e.task_id), width, e.logits.len()));
        }
        let rows: Vec<Vec<F>> = group
            .iter()
            .map(|e| e.input.iter().map(|&v| F::of(f64::from(v))).collect())
            .collect();
        let x = Tensor::from_rows(&rows)?;
        let (z, cache) = model.forward(&x, head)?;
        let mut g = Vec::with_capacity(z.len());
        for (r, e) in group.iter().enumerate() {
            let zr: Vec<F> = e.logits.iter().map(|&v| F::of(f64::from(v))).collect();
            let (l, gr) = match cfg.kind {
                MethodKind::FsrLogit | MethodKind::FsrLogitLab => logit_match(z.row(r), &zr)?,
                MethodKind::FsrDistill => kl_distill(&zr, z.row(r), tau)?,
                MethodKind::IcarlReg => sigmoid_ce(z.row(r), &zr)?,
                _ => unreachable!("checked above"),
            };
            total += lambda * l;
            g.extend(gr.into_iter().map(|v| lambda * v));
        }
        let mut gz = Tensor::matrix(group.len(), width, g)?;
        if cfg.kind == MethodKind::FsrLogitLab {
            let labels = group
                .iter()
                .map(|e| e.label.ok_or_else(|| Error::invalid(format!("memory entry of task {} has no label", e.task_id))))
                .collect::<Result<Vec<_>>>()?;
            // cross_entropy averages over the group; rescale to the overall 1/m.
            let (ce, gce) = cross_entropy(&z, &labels)?;
            let n = F::of(group.len() as f64);
            total += lambda_lab * ce * n;
            for (a, b) in gz.data_mut().iter_mut().zip(gce.data()) {
                *a += lambda_lab * n * *b;
            }
        }
        grads.add(&model.backward(&cache, &gz)?);
    }
    Ok((total, grads))
}

/// Samples a replay batch from `memory` and evaluates [`memory_penalty`].
pub fn fsr_regularizer(
    cfg: &MethodConfig,
    model: &MultiHeadMlp<f32>,
    memory: &EpisodicMemory,
    rng: &mut Rng,
) -> Result<(f32, Gradients<f32>)> {
    let all: Vec<&MemoryEntry> = memory.entries().collect();
    let picked = sample_replay(&all, cfg.replay_batch, rng);
    memory_penalty(cfg, model, &picked)
}

/// The iCaRL-style sigmoid cross-entropy regularizer on sampled memory.
pub fn icarl_regularizer(
    model: &MultiHeadMlp<f32>,
    memory: &EpisodicMemory,
    lambda: f64,
    replay_batch: Option<usize>,
    rng: &mut Rng,
) -> Result<(f32, Gradients<f32>)> {
    let cfg = MethodConfig {
        lambda,
        replay_batch,
        ..MethodConfig::new(MethodKind::IcarlReg)
    };
    fsr_regularizer(&cfg, model, memory, rng)
}

/// Distillation of a frozen previous model on the current batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LwfState<F> {
    pub snapshot: MultiHeadMlp<F>,
    /// Heads trained before the snapshot was taken.
    pub heads: Vec<usize>,
}

/// `lambda * mean_i sum_h KL_tau(f_prev,h(x_i) || f_h(x_i))` over the heads of
/// previously trained tasks.
pub fn lwf_penalty<F: Scalar>(
    model: &MultiHeadMlp<F>,
    state: &LwfState<F>,
    x: &Tensor<F>,
    lambda: f64,
    tau: f64,
) -> Result<(F, Gradients<F>)> {
    let mut total = F::zero();
    let mut grads = Gradients::zeros(model);
    let scale = F::of(lambda / x.rows().max(1) as f64);
    for &h in &state.heads {
        let teacher = state.snapshot.predict(x, h)?;
        let (z, cache) = model.forward(x, h)?;
        let mut g = Vec::with_capacity(z.len());
        for r in 0..z.rows() {
            let (l, gr) = kl_distill(teacher.row(r), z.row(r), F::of(tau))?;
            total += scale * l;
            g.extend(gr.into_iter().map(|v| scale * v));
        }
        grads.add(&model.backward(&cache, &Tensor::matrix(z.rows(), z.cols(), g)?)?);
    }
    Ok((total, grads))
}

/// Task cross-entropy plus the LwF term; the term is absent without a
/// snapshot.
pub fn lwf_loss<F: Scalar>(
    model: &MultiHeadMlp<F>,
    state: Option<&LwfState<F>>,
    x: &Tensor<F>,
    y: &[usize],
    head: usize,
    lambda: f64,
    tau: f64,
) -> Result<(F, Gradients<F>)> {
    let (mut loss, mut grads) = task_loss(model, x, y, head)?;
    if let Some(state) = state {
        let (l, g) = lwf_penalty(model, state, x, lambda, tau)?;
        loss += l;
        grads.add(&g);
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::record_logits;
    use crate::nn::MlpSpec;
    use crate::tasks::LabeledDataset;
    use rand::SeedableRng;

    fn setup() -> (MultiHeadMlp<f32>, LabeledDataset) {
        let mut rng = Rng::seed_from_u64(11);
        let model = MultiHeadMlp::from_spec(&MlpSpec::single_head(3, vec![5], 4), &mut rng).unwrap();
        let data: Vec<f32> = (0..24).map(|i| ((i * 5) % 11) as f32 / 11.0).collect();
        let ds = LabeledDataset::new(Tensor::matrix(8, 3, data).unwrap(), vec![0, 1, 2, 3, 0, 1, 2, 3], 4, "t").unwrap();
        (model, ds)
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut rng = Rng::seed_from_u64(0);
        let mut model = MultiHeadMlp::<f64>::from_spec(&MlpSpec::single_head(2, vec![], 10), &mut rng).unwrap();
        model.head_mut(0).weight.data_mut().fill(0.0);
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (l, _) = task_loss(&model, &x, &[3, 7], 0).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unchanged_model_has_zero_logit_penalty() {
        let (model, ds) = setup();
        let entries = record_logits(&model, &ds, &[0, 3, 6], 0, 0).unwrap();
        let refs: Vec<&MemoryEntry> = entries.iter().collect();
        for kind in [MethodKind::FsrLogit, MethodKind::FsrDistill] {
            let (l, g) = memory_penalty(&MethodConfig::new(kind), &model, &refs).unwrap();
            assert!(l.abs() < 1e-6, "{kind}: {l}");
            assert!(g.squared_norm() < 1e-10);
        }
        // iCaRL sits at its minimum: gradient vanishes, loss does not.
        let (l, g) = memory_penalty(&MethodConfig::new(MethodKind::IcarlReg), &model, &refs).unwrap();
        assert!(l > 0.0 && g.squared_norm() < 1e-10);
    }

    #[test]
    fn empty_memory_and_wrong_head_are_errors() {
        let (model, ds) = setup();
        let cfg = MethodConfig::new(MethodKind::FsrLogit);
        assert!(matches!(memory_penalty(&cfg, &model, &[]), Err(Error::EmptyMemory)));
        let mut e = record_logits(&model, &ds, &[0], 0, 0).unwrap();
        e[0].logits.pop();
        assert!(memory_penalty(&cfg, &model, &[&e[0]]).is_err());
        e[0].head_id = 3;
        assert!(memory_penalty(&cfg, &model, &[&e[0]]).is_err());
    }

    #[test]
    fn replay_sampling() {
        let (model, ds) = setup();
        let entries = record_logits(&model, &ds, &(0..8).collect::<Vec<_>>(), 0, 0).unwrap();
        let refs: Vec<&MemoryEntry> = entries.iter().collect();
        let mut rng = Rng::seed_from_u64(2);
        assert_eq!(sample_replay(&refs, Some(3), &mut rng).len(), 3);
        assert_eq!(sample_replay(&refs, Some(30), &mut rng).len(), 8);
        assert_eq!(sample_replay(&refs, None, &mut rng).len(), 8);
    }

    #[test]
    fn lwf_with_own_snapshot_is_plain_cross_entropy() {
        let (model, ds) = setup();
        let state = LwfState {
            snapshot: model.clone(),
            heads: vec![0],
        };
        let (a, ga) = lwf_loss(&model, Some(&state), &ds.inputs, &ds.labels, 0, 1.0, 2.0).unwrap();
        let (b, gb) = task_loss(&model, &ds.inputs, &ds.labels, 0).unwrap();
        assert!((a - b).abs() < 1e-6);
        let mut diff = ga.clone();
        diff.add_scaled(&gb, -1.0);
        assert!(diff.squared_norm() < 1e-12);
    }
}
