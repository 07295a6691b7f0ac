//! Training configuration: one flat TOML table with typed keys.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::{DegradationRanges, Task};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GuidanceSource};
use crate::losses::{LossWeights, PerceptualConfig};
use crate::metrics::NiqeConfig;
use crate::seed::Seed;
use crate::suppress::HeadActivation;

/// Model variants compared by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Learned correlation heads, encoder guidance, no pixel loss.
    #[default]
    Default,
    /// Every correlation head replaced by unit modulation.
    FixConv,
    /// Default plus a mean-absolute pixel loss.
    L1,
    /// The degraded input replaces the encoder features as guidance.
    Guidance16xFace,
    /// Precomputed parsing maps from `parsing_dir` as guidance.
    Spade,
}

impl Ablation {
    pub const TABLE: [Ablation; 4] = [Ablation::Guidance16xFace, Ablation::FixConv, Ablation::Default, Ablation::L1];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Default => "Default",
            Ablation::FixConv => "FixConv",
            Ablation::L1 => "L1",
            Ablation::Guidance16xFace => "16xFace",
            Ablation::Spade => "SPADE",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "default" => Ok(Ablation::Default),
            "fixconv" | "fix_conv" => Ok(Ablation::FixConv),
            "l1" => Ok(Ablation::L1),
            "guidance16xface" | "guidance_16xface" | "16xface" => Ok(Ablation::Guidance16xFace),
            "spade" => Ok(Ablation::Spade),
            other => Err(Error::arg(format!(
                "unknown ablation `{other}` (expected default, fixconv, l1, guidance_16xface, spade)"
            ))),
        }
    }
}

fn d_channels() -> Vec<usize> {
    vec![64, 128, 256, 512]
}
fn d_parsing_channels() -> usize {
    1
}
fn d_batch() -> usize {
    4
}
fn d_lr_g() -> f64 {
    1e-4
}
fn d_lr_d() -> f64 {
    4e-4
}
fn d_beta2() -> f64 {
    0.9
}
fn d_lambda() -> f64 {
    10.0
}
fn d_ablation_l1() -> f64 {
    10.0
}
fn d_fraction() -> f64 {
    0.1
}
fn d_val_every() -> u64 {
    100
}
fn d_ckpt_every() -> u64 {
    500
}
fn d_val_images() -> usize {
    16
}
fn d_disc_scales() -> usize {
    2
}
fn d_disc_channels() -> Vec<usize> {
    vec![32, 64, 128]
}
fn d_perc() -> PerceptualConfig {
    PerceptualConfig::default()
}
fn d_perc_channels() -> Vec<usize> {
    d_perc().channels
}
fn d_perc_seed() -> Seed {
    d_perc().seed
}
fn d_ranges() -> DegradationRanges {
    DegradationRanges::default()
}
fn d_gauss_sigma() -> [f64; 2] {
    d_ranges().gauss_sigma
}
fn d_motion_length() -> [usize; 2] {
    d_ranges().motion_length
}
fn d_downsample_factors() -> Vec<usize> {
    d_ranges().downsample_factors
}
fn d_noise_level() -> [f64; 2] {
    d_ranges().noise_level
}
fn d_jpeg_quality() -> [u8; 2] {
    d_ranges().jpeg_quality
}
fn d_mosaic_range() -> [usize; 2] {
    d_ranges().mosaic_block
}
fn d_niqe_patch() -> usize {
    NiqeConfig::default().patch_size
}
fn d_niqe_min() -> usize {
    NiqeConfig::default().min_images
}

/// Every knob of dataset construction, the models, the losses and the loop.
/// `task`, `resolution`, `steps` and `seed` are required; everything else
/// has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub resolution: usize,
    pub steps: u64,
    pub seed: Seed,

    #[serde(default = "d_channels")]
    pub channels: Vec<usize>,
    #[serde(default)]
    pub head_activation: HeadActivation,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsing_dir: Option<PathBuf>,
    /// Channels of the maps in `parsing_dir`.
    #[serde(default = "d_parsing_channels")]
    pub parsing_channels: usize,

    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr_g")]
    pub lr_g: f64,
    #[serde(default = "d_lr_d")]
    pub lr_d: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    /// Both learning rates decay linearly from this step to the last one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_start: Option<u64>,

    #[serde(default = "d_lambda")]
    pub lambda_fm: f64,
    #[serde(default = "d_lambda")]
    pub lambda_perc: f64,
    #[serde(default)]
    pub l1_weight: f64,
    /// Pixel-loss weight the ablation harness gives its L1 variant.
    #[serde(default = "d_ablation_l1")]
    pub ablation_l1_weight: f64,

    #[serde(default = "d_disc_scales")]
    pub disc_scales: usize,
    #[serde(default = "d_disc_channels")]
    pub disc_channels: Vec<usize>,
    #[serde(default)]
    pub disc_instance_norm: bool,

    #[serde(default = "d_perc_channels")]
    pub perc_channels: Vec<usize>,
    #[serde(default = "d_perc_seed")]
    pub perc_seed: Seed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perc_weights: Option<PathBuf>,

    #[serde(default = "d_gauss_sigma")]
    pub gauss_sigma: [f64; 2],
    #[serde(default = "d_motion_length")]
    pub motion_length: [usize; 2],
    #[serde(default = "d_downsample_factors")]
    pub downsample_factors: Vec<usize>,
    #[serde(default = "d_noise_level")]
    pub noise_level: [f64; 2],
    #[serde(default = "d_jpeg_quality")]
    pub jpeg_quality: [u8; 2],
    #[serde(default = "d_mosaic_range")]
    pub mosaic_range: [usize; 2],
    /// Block of the hallucination task; `resolution / 32` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mosaic_block: Option<usize>,

    #[serde(default = "d_fraction")]
    pub val_fraction: f64,
    #[serde(default = "d_fraction")]
    pub test_fraction: f64,
    #[serde(default = "d_val_every")]
    pub val_every: u64,
    #[serde(default = "d_val_images")]
    pub val_images: usize,
    #[serde(default = "d_ckpt_every")]
    pub ckpt_every: u64,

    #[serde(default = "d_niqe_patch")]
    pub niqe_patch: usize,
    #[serde(default = "d_niqe_min")]
    pub niqe_min_images: usize,
}

/// Keys without defaults.
pub const REQUIRED_KEYS: [&str; 4] = ["task", "resolution", "steps", "seed"];

/// Bumped whenever the model layout or checkpoint encoding changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

impl TrainConfig {
    /// Defaults for everything but the required keys.
    pub fn new(task: Task, resolution: usize, steps: u64, seed: Seed) -> Self {
        let mut t = toml::Table::new();
        t.insert("task".into(), toml::Value::try_from(task).expect("task serializes"));
        t.insert("resolution".into(), toml::Value::Integer(resolution as i64));
        t.insert("steps".into(), toml::Value::Integer(steps as i64));
        t.insert("seed".into(), toml::Value::Integer(seed.0 as i64));
        t.try_into().expect("defaults deserialize")
    }

    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        for key in REQUIRED_KEYS {
            if !table.contains_key(key) {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        let cfg: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the format version and the canonical TOML form.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(MODEL_FORMAT_VERSION.to_le_bytes());
        h.update(self.to_toml().as_bytes());
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ranges(&self) -> DegradationRanges {
        DegradationRanges {
            gauss_sigma: self.gauss_sigma,
            motion_length: self.motion_length,
            downsample_factors: self.downsample_factors.clone(),
            noise_level: self.noise_level,
            jpeg_quality: self.jpeg_quality,
            mosaic_block: self.mosaic_range,
        }
    }

    pub fn effective_mosaic_block(&self) -> usize {
        self.mosaic_block.unwrap_or((self.resolution / 32).max(1))
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_fm: self.lambda_fm,
            lambda_perc: self.lambda_perc,
        }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let guidance = match self.ablation {
            Ablation::Guidance16xFace => GuidanceSource::Input,
            Ablation::Spade => {
                if self.parsing_dir.is_none() {
                    return Err(Error::Config("ablation `spade` needs `parsing_dir`".into()));
                }
                GuidanceSource::External {
                    channels: self.parsing_channels,
                }
            }
            _ => GuidanceSource::Encoded,
        };
        Ok(GeneratorConfig {
            resolution: self.resolution,
            channels: self.channels.clone(),
            activation: self.head_activation,
            fixed_modulation: self.ablation == Ablation::FixConv,
            guidance,
        })
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            scales: self.disc_scales,
            channels: self.disc_channels.clone(),
            instance_norm: self.disc_instance_norm,
        }
    }

    pub fn perceptual_config(&self) -> PerceptualConfig {
        PerceptualConfig {
            channels: self.perc_channels.clone(),
            seed: self.perc_seed,
            weights: self.perc_weights.clone(),
        }
    }

    pub fn niqe_config(&self) -> NiqeConfig {
        NiqeConfig {
            patch_size: self.niqe_patch,
            min_images: self.niqe_min_images,
            ..NiqeConfig::default()
        }
    }

    /// Learning-rate multiplier for the update taken at `step` (0-based):
    /// 1 before `lr_decay_start`, then falling linearly to `1 / (steps - start)`.
    pub fn lr_scale(&self, step: u64) -> f64 {
        match self.lr_decay_start {
            Some(start) if step >= start && start < self.steps => {
                (self.steps - step.min(self.steps - 1)) as f64 / (self.steps - start) as f64
            }
            _ => 1.0,
        }
    }

    /// The same config with `ablation` applied the way the harness trains it.
    pub fn for_variant(&self, v: Ablation) -> TrainConfig {
        let mut c = self.clone();
        c.ablation = v;
        c.l1_weight = if v == Ablation::L1 { self.ablation_l1_weight } else { 0.0 };
        c
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must be positive, got {v}")))
            }
        };
        positive("lr_g", self.lr_g)?;
        positive("lr_d", self.lr_d)?;
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("`beta1`/`beta2` must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("`batch_size` must be at least 1".into()));
        }
        if !(self.l1_weight.is_finite() && self.l1_weight >= 0.0) {
            return Err(Error::Config("`l1_weight` must be non-negative".into()));
        }
        if self.parsing_channels == 0 {
            return Err(Error::Config("`parsing_channels` must be positive".into()));
        }
        if self.ablation == Ablation::L1 && self.l1_weight == 0.0 {
            return Err(Error::Config("ablation `l1` needs `l1_weight` > 0".into()));
        }
        self.loss_weights().validate()?;
        self.ranges().validate()?;
        let n = self.channels.len();
        if n == 0 || n >= 16 || self.resolution == 0 || self.resolution % (1 << n) != 0 {
            return Err(Error::Config(format!(
                "`resolution` {} must be divisible by 2^{n} ({} stages from `channels`)",
                self.resolution, n
            )));
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(0.0..1.0).contains(&v) || !(0.0..1.0).contains(&t) || v + t >= 1.0 {
            return Err(Error::Config("`val_fraction` + `test_fraction` must be below 1".into()));
        }
        if self.lr_decay_start.is_some_and(|s| s >= self.steps) {
            return Err(Error::Config("`lr_decay_start` must be below `steps`".into()));
        }
        if self.val_every == 0 || self.ckpt_every == 0 {
            return Err(Error::Config("`val_every` and `ckpt_every` must be positive".into()));
        }
        self.discriminator_config().validate()?;
        if self.perc_channels.is_empty() || self.perc_channels.contains(&0) {
            return Err(Error::Config("`perc_channels` must be positive widths".into()));
        }
        self.niqe_config().validate()?;
        Ok(())
    }
}
