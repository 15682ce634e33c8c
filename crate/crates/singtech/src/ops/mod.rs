//! Differentiable primitives with hand-derived backward passes.

pub mod activ;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activ::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    BitMask, DropoutMask,
};
pub use conv::{conv2d, conv2d_backward, ConvSpec};
pub use linear::{linear, linear_backward};
pub use loss::{softmax_cross_entropy, LossOutput};
pub use norm::{batchnorm2d, batchnorm2d_backward, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use pool::{maxpool2d, maxpool2d_backward, PoolArgmax};
