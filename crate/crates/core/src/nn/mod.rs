//! Minimal Conv1d/BatchNorm/ReLU/Dense engine with hand-written gradients,
//! the supervised and distillation losses, and the SGD/Adam optimizers.

mod io;
mod layers;
mod loss;
mod optim;
mod params;
mod spec;
mod tensor;

pub use io::{read_params, write_params};
pub use layers::{backward, forward, forward_train, Forward, ForwardCache, Mode, BN_EPS, BN_MOMENTUM};
pub use loss::{log_softmax_temperature, loss_kd, loss_supervised, softmax_temperature, LabelMode, LossOutput};
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_LR_DECAY};
pub use params::{Gradients, ModelParams, ParamBlock};
pub use spec::{
    Layer, NetworkSpec, Role, DEFAULT_KERNEL_SIZE, STUDENT_CONV_CHANNELS, STUDENT_HIDDEN, TEACHER_CONV_CHANNELS,
    TEACHER_HIDDEN,
};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,
    #[error("non-finite gradient {value} at parameter {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
