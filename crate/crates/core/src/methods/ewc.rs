use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::objectives::task_loss;
use crate::error::{Error, Result};
use crate::nn::{Gradients, Model, MultiHeadMlp, Scalar};
use crate::rng::Rng;
use crate::tasks::LabeledDataset;

/// Anchor parameters and the diagonal Fisher summed over finished tasks,
/// both in the flat parameter layout of the model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EwcState {
    pub anchor: Vec<f64>,
    pub fisher: Vec<f64>,
    pub tasks_seen: usize,
}

impl EwcState {
    pub fn is_initialized(&self) -> bool {
        self.tasks_seen > 0
    }
}

/// Empirical Fisher diagonal of `ds` on `head`: the mean over examples of the
/// elementwise squared gradient of `log p(y_i | x_i)`. At most `max_examples`
/// rows, drawn uniformly without replacement, are used.
pub fn empirical_fisher<F: Scalar>(
    model: &MultiHeadMlp<F>,
    ds: &LabeledDataset,
    head: usize,
    max_examples: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = ds.len().min(max_examples);
    if n == 0 {
        return Err(Error::invalid("Fisher estimate needs at least one example"));
    }
    let mut rows = if n < ds.len() {
        index::sample(rng, ds.len(), n).into_vec()
    } else {
        (0..n).collect()
    };
    rows.sort_unstable();
    let mut fisher = vec![0.0; model.parameter_count()];
    for i in rows {
        let x = ds.inputs.select_rows(&[i]).cast::<F>();
        // Gradient of -log p is the negated gradient of log p; squares agree.
        let (_, g) = task_loss(model, &x, &[ds.labels[i]], head)?;
        for (f, v) in fisher.iter_mut().zip(g.to_flat(model)) {
            *f += v.f64() * v.f64();
        }
    }
    fisher.iter_mut().for_each(|f| *f /= n as f64);
    Ok(fisher)
}

/// End-of-task hook: adds the task's Fisher diagonal to the running sum and
/// moves the anchor to the current parameters.
pub fn ewc_accumulate_fisher(
    state: &mut EwcState,
    model: &Model,
    ds: &LabeledDataset,
    head: usize,
    max_examples: usize,
    rng: &mut Rng,
) -> Result<()> {
    let f = empirical_fisher(model, ds, head, max_examples, rng)?;
    // Heads appended later extend the flat layout; earlier slots never move.
    state.fisher.resize(f.len().max(state.fisher.len()), 0.0);
    for (a, b) in state.fisher.iter_mut().zip(&f) {
        *a += b;
    }
    state.anchor = model.params_flat().into_iter().map(f64::from).collect();
    state.tasks_seen += 1;
    Ok(())
}

/// `(lambda/2) sum_i F_i (theta_i - anchor_i)^2` and its gradient
/// `lambda F (theta - anchor)`.
pub fn ewc_penalty<F: Scalar>(model: &MultiHeadMlp<F>, state: &EwcState, lambda: f64) -> Result<(F, Gradients<F>)> {
    let theta = model.params_flat();
    if state.anchor.len() != theta.len() || state.fisher.len() != theta.len() {
        return Err(Error::shape("EWC state vs model parameters", theta.len(), state.anchor.len().min(state.fisher.len())));
    }
    let mut loss = 0.0;
    let flat: Vec<F> = theta
        .iter()
        .zip(&state.anchor)
        .zip(&state.fisher)
        .map(|((&t, &a), &f)| {
            let d = t.f64() - a;
            loss += f * d * d;
            F::of(lambda * f * d)
        })
        .collect();
    let mut grads = Gradients::zeros(model);
    grads.add_flat(model, &flat)?;
    Ok((F::of(0.5 * lambda * loss), grads))
}
