//! Non-shift neural primitives, each as a forward/backward pair of free functions.

pub mod activation;
pub mod conv;
pub mod dropout;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{relu_backward, relu_forward, sigmoid, sigmoid_backward};
pub use conv::{conv2d_backward, conv2d_forward, depthwise_backward, depthwise_forward, ConvGrads, ConvParams};
pub use dropout::{dropout, dropout_backward};
pub use linear::{channel_scale, channel_scale_backward, fc_backward, fc_forward, FcGrads, FcParams};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_forward, BNParams, BnCache, BnGrads};
pub use pool::{
    avgpool2x2, avgpool2x2_backward, global_avg_pool, global_avg_pool_backward, maxpool2x2, maxpool2x2_backward,
};
