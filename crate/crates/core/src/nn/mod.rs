//! Minimal classical tensor/NN stack with reverse-mode rules, plus the
//! builders for the four experiment architectures.

mod layers;
mod loss;
mod model;
mod optim;
mod quantum;
mod tensor;

pub use layers::{BatchNorm, Conv2d, Dense, Flatten, MaxPool2, Mode, NamedTensor, ParamBinding, Relu};
pub use loss::{cross_entropy, cross_entropy_batch, LossRecord};
pub use model::{build_model, count_parameters, Layer, Model, ModelConfig, ModelVariant, NamedLayer, ParamCount};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use quantum::{Quanv, QuantumDense};
pub use tensor::Tensor;
