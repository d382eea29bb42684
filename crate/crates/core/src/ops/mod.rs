//! Forward kernels and their paired gradient kernels.

mod activation;
mod concat;
mod conv;
mod linear;
mod loss;
mod norm;
mod pool;

pub use activation::{relu, relu_grad};
pub use concat::{concat_channels, split_channels};
pub use conv::{
    axis_geometry, conv2d, conv2d_grad, depthwise_conv2d, depthwise_conv2d_grad, output_dim, AxisGeometry,
    ConvGrads, ConvParams, Padding,
};
pub use linear::{linear, linear_grad, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{
    batchnorm2d, batchnorm2d_grad, BatchNormCache, BatchNormGrads, BatchNormOutput, BatchNormState, BatchStats, Mode,
    BN_EPSILON, BN_MOMENTUM,
};
pub use pool::{
    avg_pool2d, avg_pool2d_grad, global_avg_pool, global_avg_pool_grad, maxpool2d, maxpool2d_grad, PoolParams,
};
