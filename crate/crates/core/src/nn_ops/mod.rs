//! Forward and backward CPU kernels for the layer primitives.
//!
//! Every function here is pure: inputs are borrowed, outputs are fresh
//! tensors. Parallel kernels partition work by output plane, so results do
//! not depend on the rayon thread count.

mod activation;
mod conv;
mod norm;
mod pool;

pub use activation::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
};
pub use conv::{conv2d, conv2d_backward, conv2d_naive, Conv2dGrads};
pub use norm::{
    batchnorm2d_backward, batchnorm2d_eval, batchnorm2d_train, BatchNormForward, BatchNormGrads, BatchNormSaved,
    DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};
pub use pool::{maxpool2, maxpool2_backward, upsample_nearest2, upsample_nearest2_backward};
