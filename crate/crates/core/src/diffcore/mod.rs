//! Minimal reverse-mode training core: tensors, dense layers, fused
//! softmax cross-entropy, momentum SGD and EMA teacher tracking.

mod layer;
mod loss;
mod network;
mod optim;
mod tensor;

pub use layer::{relu, relu_backward, DenseLayer};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_sum, softmax_rows, CeOutput};
pub use network::Network;
pub use optim::{ema_update, sgd_step_slice, SgdConfig, SgdOptimizer};
pub use tensor::Tensor2;
