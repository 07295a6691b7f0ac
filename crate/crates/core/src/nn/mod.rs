//! A small single-sample layer engine: every tensor is one `C×H×W` feature
//! map, every layer has an explicit forward (returning what backward needs)
//! and an explicit backward. Batching happens one level up, in training.

mod adam;
mod conv;
pub mod gradcheck;
mod ops;
mod params;

pub use adam::Adam;
pub use conv::{col2im, im2col, ConvCache, ConvKernel, Dense};
pub use ops::{
    avg_pool2, avg_pool2_backward, instance_norm, instance_norm_backward, leaky_relu,
    leaky_relu_backward, reflect, resize_nearest, resize_nearest_backward, upsample2,
    upsample2_backward, InstanceNormCache, LEAKY_SLOPE, NORM_EPS,
};
pub use params::{Parameters, ParametersExt};

use ndarray::Array3;

/// A `C×H×W` activation tensor.
pub type Tensor = Array3<f64>;
