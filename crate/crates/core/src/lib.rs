//! Face renovation: degradation simulation, a content-adaptive suppression
//! encoder with a guided nested generator, adversarial training and image
//! quality metrics, all on a small deterministic f64 layer engine.

pub mod archive;
pub mod degrade;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod resample;
pub mod seed;
pub mod suppress;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{load_image, save_image, ColorSpace, Image};
pub use seed::Seed;

/// Compiles the guide's snippets as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/degradation.md")]
    struct Degradation;
    #[doc = include_str!("../../../book/src/suppression.md")]
    struct Suppression;
    #[doc = include_str!("../../../book/src/generator.md")]
    struct Generator;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
