//! Layer engine: convolution, batch normalization, pooling, dense layers,
//! dropout and softmax loss with explicit forward/backward passes, plus
//! initializers, optimizers and the checkpoint container.

pub mod activation;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod init;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod pool;
mod scalar;
mod tensor;

pub use activation::{dropout, dropout_backward, relu, relu_backward, softmax};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormParams, Mode};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
pub use init::{init_he_normal, init_xavier_modified};
pub use linear::{fc_backward, fc_forward};
pub use loss::{batch_softmax_cross_entropy, softmax_cross_entropy};
pub use optim::{OptimizerKind, OptimizerState};
pub use pool::{pool2d, pool2d_backward, PoolGeometry, PoolKind};
pub use scalar::Scalar;
pub use tensor::Tensor4;
