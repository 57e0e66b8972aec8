use serde::{Deserialize, Serialize};

use super::model::{Gradients, MultiHeadMlp};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerSpec {
    pub fn sgd(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay,
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::adam(),
            lr,
            weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.kind {
            let unit = |b: f64| b > 0.0 && b < 1.0;
            if !unit(beta1) || !unit(beta2) || !(eps > 0.0) {
                return Err(Error::invalid("adam requires beta1, beta2 in (0,1) and eps > 0"));
            }
        }
        Ok(())
    }
}

fn check_len<F>(params: &[F], grads: &[F]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("optimizer step", params.len(), grads.len()));
    }
    Ok(())
}

/// `theta <- theta - lr * (g + weight_decay * theta)`.
pub fn sgd_step<F: Scalar>(params: &mut [F], grads: &[F], lr: F, weight_decay: F) -> Result<()> {
    check_len(params, grads)?;
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + weight_decay * *p);
    }
    Ok(())
}

/// Moment buffers of one parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    /// Updates applied so far to this array.
    pub t: u64,
}

impl<F: Scalar> AdamMoments<F> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update with L2 weight decay folded into the gradient.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    moments: &mut AdamMoments<F>,
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    weight_decay: F,
) -> Result<()> {
    check_len(params, grads)?;
    check_len(params, &moments.m)?;
    moments.t += 1;
    let t = moments.t as i32;
    let bc1 = F::one() - beta1.powi(t);
    let bc2 = F::one() - beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        let g = g + weight_decay * *p;
        *m = beta1 * *m + (F::one() - beta1) * g;
        *v = beta2 * *v + (F::one() - beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer bound to one model's parameter slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Serialize + for<'a> Deserialize<'a>")]
pub struct OptimizerState<F> {
    pub spec: OptimizerSpec,
    /// Current step size; schedules may lower it below `spec.lr`.
    pub lr: f64,
    /// Total `step` calls.
    pub t: u64,
    moments: Vec<AdamMoments<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(spec: OptimizerSpec, model: &MultiHeadMlp<F>) -> Result<Self> {
        spec.validate()?;
        let moments = match spec.kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam { .. } => (0..model.slot_count())
                .map(|s| AdamMoments::zeros(model.slot(s).len()))
                .collect(),
        };
        Ok(Self {
            spec,
            lr: spec.lr,
            t: 0,
            moments,
        })
    }

    pub fn moments(&self) -> &[AdamMoments<F>] {
        &self.moments
    }

    /// Applies one update. Slots without a gradient (inactive heads) are
    /// left untouched, weight decay included.
    pub fn step(&mut self, model: &mut MultiHeadMlp<F>, grads: &Gradients<F>) -> Result<()> {
        let slots = model.slot_count();
        if grads.trunk.len() * 2 + grads.heads.len() * 2 != slots {
            return Err(Error::shape("gradient slots", slots, grads.trunk.len() * 2 + grads.heads.len() * 2));
        }
        let lr = F::of(self.lr);
        let wd = F::of(self.spec.weight_decay);
        for s in 0..slots {
            let Some(g) = grads.slot(s) else { continue };
            match self.spec.kind {
                OptimizerKind::Sgd => sgd_step(model.slot_mut(s), g, lr, wd)?,
                OptimizerKind::Adam { beta1, beta2, eps } => adam_step(
                    model.slot_mut(s),
                    g,
                    &mut self.moments[s],
                    lr,
                    F::of(beta1),
                    F::of(beta2),
                    F::of(eps),
                    wd,
                )?,
            }
        }
        self.t += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut p = [1.0f64];
        sgd_step(&mut p, &[0.0], 0.001, 0.0).unwrap();
        assert_eq!(p, [1.0]);
        sgd_step(&mut p, &[1.0], 0.001, 0.0).unwrap();
        assert!((p[0] - 0.999).abs() < 1e-15);
        let mut p = [1.0f64];
        sgd_step(&mut p, &[0.0], 0.001, 0.0001).unwrap();
        assert!((p[0] - 0.9999999).abs() < 1e-15);
        assert!(sgd_step(&mut p, &[0.0, 1.0], 0.1, 0.0).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = [0.5f64, -2.0];
        let mut m = AdamMoments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m, 1e-4, 0.9, 0.999, 1e-8, 0.0).unwrap();
        assert_eq!(p, [0.5, -2.0]);
        assert_eq!(m.t, 1);
    }

    #[test]
    fn adam_spec_validation() {
        assert!(OptimizerSpec::adam(0.0, 0.0).validate().is_err());
        let mut s = OptimizerSpec::adam(1e-3, 0.0);
        s.kind = OptimizerKind::Adam {
            beta1: 1.0,
            beta2: 0.999,
            eps: 1e-8,
        };
        assert!(s.validate().is_err());
    }
}
