//! Array kernels: forward and backward implementations for every primitive
//! the network graph uses. Kernels are pure functions over `ndarray` views;
//! the graph layer owns tracking and gradient accumulation.

pub mod conv;
pub mod elementwise;
pub mod lossk;
pub mod norm;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, conv2d_backward, deconv2x2, deconv2x2_backward};
pub use elementwise::{
    add_n, concat_channels, linear, linear_backward, mul, mul_channel, mul_channel_backward,
    mul_spatial, mul_spatial_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    split_channels_backward, sum_all,
};
pub use lossk::{bce, bce_backward, iou, iou_backward};
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BnForward};
pub use pool::{
    channel_max, channel_max_backward, global_max_spatial, global_max_spatial_backward,
    maxpool2x2, maxpool2x2_backward,
};
pub use resize::{bilinear_resize, bilinear_resize_backward};

/// Output spatial extent of a stride-1 convolution.
pub fn conv_out_len(in_len: usize, k: usize, pad: usize, dilation: usize) -> usize {
    let span = dilation * (k - 1) + 1;
    in_len + 2 * pad + 1 - span
}
