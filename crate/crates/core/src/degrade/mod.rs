//! Degradation simulation: the single operators and the task pipelines
//! composed from them.

mod ops;
mod pipeline;

pub use ops::{
    add_noise, downsample, gaussian_blur, gaussian_kernel, jpeg_compress, mosaic, motion_blur, motion_kernel,
    NoiseFamily, GAUSS_TRUNCATE,
};
pub use pipeline::{
    compose_full_degradation, sample_full_pipeline, task_pipeline, DegradationKind, DegradationPipeline,
    DegradationRanges, DegradationSpec, Family, Operator, Stage, Task,
};
