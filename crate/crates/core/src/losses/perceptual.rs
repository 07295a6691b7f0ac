//! Frozen convolutional feature stack used for the perceptual loss and the
//! Fréchet feature distance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{avg_pool2, avg_pool2_backward, leaky_relu, leaky_relu_backward, ConvCache, ConvKernel, Tensor};
use crate::seed::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightsSource {
    FixedRandom { seed: Seed },
    Loaded { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    /// Output channels of each block; a tap follows every block.
    pub channels: Vec<usize>,
    pub seed: Seed,
    /// Load weights from a tensor archive instead of the seeded initialization.
    pub weights: Option<PathBuf>,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            channels: vec![16, 32, 64, 128],
            seed: Seed(0x5eed_0f_fea7),
            weights: None,
        }
    }
}

/// Blocks of `3×3 conv → leaky rectifier`, a tap after each and 2× average
/// pooling between consecutive blocks. Weights never change after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualExtractor {
    layers: Vec<ConvKernel>,
    source: WeightsSource,
}

/// Forward intermediates for [`PerceptualExtractor::backward`].
pub struct PerceptualCache {
    blocks: Vec<(ConvCache, Tensor, (usize, usize))>,
}

impl PerceptualExtractor {
    pub fn fixed_random(channels: &[usize], seed: Seed) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::Config("perceptual channels must be a non-empty list of positive widths".into()));
        }
        let mut rng = seed.rng();
        let mut c_in = 3;
        let layers = channels
            .iter()
            .map(|&c| {
                let k = ConvKernel::init(c, c_in, 3, 2f64.sqrt(), &mut rng);
                c_in = c;
                k
            })
            .collect();
        Ok(PerceptualExtractor {
            layers,
            source: WeightsSource::FixedRandom { seed },
        })
    }

    /// Reads a tensor archive with entries `layers.<i>.weight` / `layers.<i>.bias`
    /// whose shapes match `channels`.
    pub fn load(channels: &[usize], path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let archive = TensorArchive::from_bytes(&bytes)?;
        let mut p = Self::fixed_random(channels, Seed(0))?;
        archive.load_params("layers", &mut p.layers)?;
        p.source = WeightsSource::Loaded { path: path.to_path_buf() };
        Ok(p)
    }

    pub fn from_config(cfg: &PerceptualConfig) -> Result<Self> {
        match &cfg.weights {
            Some(path) => Self::load(&cfg.channels, path),
            None => Self::fixed_random(&cfg.channels, cfg.seed),
        }
    }

    /// Writes the weights in the format [`PerceptualExtractor::load`] reads.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = TensorArchive::default();
        a.push_params("layers", &self.layers);
        std::fs::write(path, a.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn source(&self) -> &WeightsSource {
        &self.source
    }

    pub fn tap_count(&self) -> usize {
        self.layers.len()
    }

    /// Dims of every tap for an `h × w` input.
    pub fn tap_dims(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (h, w);
        self.layers
            .iter()
            .enumerate()
            .map(|(i, k)| {
                if i > 0 {
                    h /= 2;
                    w /= 2;
                }
                (k.c_out(), h, w)
            })
            .collect()
    }

    /// Taps of a `[-1, 1]` RGB tensor.
    pub fn forward(&self, x: &Tensor) -> Result<(Vec<Tensor>, PerceptualCache)> {
        let (_, h, w) = x.dim();
        let levels = self.layers.len();
        if h >> (levels - 1) == 0 || w >> (levels - 1) == 0 {
            return Err(Error::arg(format!("input {h}x{w} too small for {levels} perceptual blocks")));
        }
        let mut taps = Vec::with_capacity(levels);
        let mut blocks = Vec::with_capacity(levels);
        let mut cur = x.clone();
        for (i, k) in self.layers.iter().enumerate() {
            let mut pool_dims = (0, 0);
            if i > 0 {
                pool_dims = (cur.dim().1, cur.dim().2);
                cur = avg_pool2(&cur);
            }
            k.check_input(&cur)?;
            let (pre, cache) = k.forward(&cur, 1);
            cur = leaky_relu(&pre);
            taps.push(cur.clone());
            blocks.push((cache, pre, pool_dims));
        }
        Ok((taps, PerceptualCache { blocks }))
    }

    /// Gradient w.r.t. the input given gradients for every tap.
    pub fn backward(&self, cache: &PerceptualCache, gtaps: &[Tensor]) -> Tensor {
        let mut g: Option<Tensor> = None;
        for i in (0..self.layers.len()).rev() {
            let mut gout = gtaps[i].clone();
            if let Some(prev) = g.take() {
                gout += &prev;
            }
            let (conv_cache, pre, pool_dims) = &cache.blocks[i];
            let gpre = leaky_relu_backward(pre, &gout);
            let mut gin = self.layers[i].backward_input(conv_cache, &gpre);
            if i > 0 {
                gin = avg_pool2_backward(&gin, pool_dims.0, pool_dims.1);
            }
            g = Some(gin);
        }
        g.expect("at least one block")
    }

    /// Spatial mean of the deepest tap.
    pub fn pooled_features(&self, img: &Image) -> Result<Vec<f64>> {
        let (taps, _) = self.forward(&img.to_rgb().to_signed())?;
        let deepest = taps.last().expect("at least one tap");
        Ok(deepest.outer_iter().map(|plane| plane.mean().unwrap_or(0.0)).collect())
    }
}

/// `Σ_i ‖φ_i(a) − φ_i(b)‖² / (H_i W_i C_i)` and its gradient w.r.t. `gen`,
/// both tensors in `[0, 1]` RGB.
pub fn perceptual_loss_grad(gt: &Tensor, gen: &Tensor, p: &PerceptualExtractor) -> Result<(f64, Tensor)> {
    if gt.dim() != gen.dim() {
        return Err(Error::arg(format!("perceptual loss dims differ: {:?} vs {:?}", gt.dim(), gen.dim())));
    }
    let (ta, _) = p.forward(&gt.mapv(|v| 2.0 * v - 1.0))?;
    let (tb, cache) = p.forward(&gen.mapv(|v| 2.0 * v - 1.0))?;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(ta.len());
    for (a, b) in ta.iter().zip(&tb) {
        let n = a.len() as f64;
        let diff = b - a;
        loss += diff.iter().map(|v| v * v).sum::<f64>() / n;
        grads.push(diff * (2.0 / n));
    }
    let g = p.backward(&cache, &grads) * 2.0;
    Ok((loss, g))
}

pub fn perceptual_loss(gt: &Image, gen: &Image, p: &PerceptualExtractor) -> Result<f64> {
    Ok(perceptual_loss_grad(gt.to_rgb().data(), gen.to_rgb().data(), p)?.0)
}
