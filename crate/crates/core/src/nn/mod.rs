//! Deterministic dense-network engine: multi-head MLPs, losses, optimizers.

mod init;
mod layer;
mod loss;
mod model;
mod optim;
mod tensor;

pub use init::{orthogonal, InitScheme};
pub use layer::{leaky_relu, leaky_relu_inverse, Activation, DenseLayer};
pub use loss::{cross_entropy, kl_distill, log_softmax, logistic, logit_match, sigmoid_ce, softmax};
pub use model::{ForwardCache, Gradients, LayerGrad, MlpSpec, MultiHeadMlp};
pub use optim::{adam_step, sgd_step, AdamMoments, OptimizerKind, OptimizerSpec, OptimizerState};
pub use tensor::{gemm, Scalar, Tensor};

/// Models are trained in single precision.
pub type Model = MultiHeadMlp<f32>;
