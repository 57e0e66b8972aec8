use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Leaky rectifier: `x` for `x >= 0`, `alpha * x` otherwise.
pub fn leaky_relu<F: Scalar>(x: F, alpha: F) -> F {
    if x >= F::zero() {
        x
    } else {
        alpha * x
    }
}

/// Inverse of [`leaky_relu`] for `alpha > 0`.
pub fn leaky_relu_inverse<F: Scalar>(y: F, alpha: F) -> F {
    if y >= F::zero() {
        y
    } else {
        y / alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { alpha: f64 },
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { alpha } if !(alpha > 0.0) => {
                Err(Error::invalid(format!("leaky_relu alpha must be > 0, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply<F: Scalar>(&self, x: F) -> F {
        match *self {
            Activation::Identity => x,
            Activation::Relu => x.max(F::zero()),
            Activation::LeakyRelu { alpha } => leaky_relu(x, F::of(alpha)),
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    pub fn derivative<F: Scalar>(&self, x: F) -> F {
        match *self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x >= F::zero() {
                    F::one()
                } else {
                    F::of(alpha)
                }
            }
        }
    }
}

/// Fully connected layer `y = act(x W^T + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Serialize + for<'a> Deserialize<'a>")]
pub struct DenseLayer<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub activation: Activation,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(weight: Tensor<F>, bias: Tensor<F>, activation: Activation) -> Result<Self> {
        activation.validate()?;
        if weight.shape().len() != 2 {
            return Err(Error::shape("layer weight rank", 2, weight.shape().len()));
        }
        if bias.len() != weight.rows() {
            return Err(Error::shape("layer bias", weight.rows(), bias.len()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(vec![outputs, inputs]),
            bias: Tensor::zeros(vec![outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Returns `(pre_activation, output)` for a `B x in` batch.
    pub fn forward(&self, x: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let batch = x.rows();
        let (din, dout) = (self.inputs(), self.outputs());
        let mut pre = Vec::with_capacity(batch * dout);
        for _ in 0..batch {
            pre.extend_from_slice(self.bias.data());
        }
        gemm(
            batch,
            din,
            dout,
            F::one(),
            x.data(),
            false,
            self.weight.data(),
            true,
            F::one(),
            &mut pre,
        );
        let out = if self.activation == Activation::Identity {
            pre.clone()
        } else {
            pre.iter().map(|&v| self.activation.apply(v)).collect()
        };
        (
            Tensor::matrix(batch, dout, pre).expect("shape"),
            Tensor::matrix(batch, dout, out).expect("shape"),
        )
    }

    pub fn cast<G: Scalar>(&self) -> DenseLayer<G> {
        DenseLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            activation: self.activation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(1.0f64, 0.2), 1.0);
        assert!((leaky_relu(-1.0f64, 0.2) + 0.2).abs() < 1e-15);
        for x in [-3.0f64, 0.0, 3.0] {
            let y = leaky_relu(x, 0.2);
            assert!((leaky_relu_inverse(y, 0.2) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        let w = Tensor::<f32>::zeros(vec![2, 2]);
        let b = Tensor::<f32>::zeros(vec![2]);
        assert!(DenseLayer::new(w, b, Activation::LeakyRelu { alpha: 0.0 }).is_err());
    }
}
