//! Multi-scale patch discriminator returning raw logit maps and every
//! intermediate activation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    avg_pool2, avg_pool2_backward, instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward,
    ConvCache, ConvKernel, InstanceNormCache, Parameters, Tensor,
};
use crate::seed::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub scales: usize,
    /// Widths of the hidden stride-2 layers; a 1-channel logit layer follows.
    pub channels: Vec<usize>,
    pub instance_norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            scales: 2,
            channels: vec![32, 64, 128],
            instance_norm: false,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(Error::Config("discriminator needs at least one scale".into()));
        }
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(Error::Config("discriminator needs at least two positive hidden widths".into()));
        }
        Ok(())
    }
}

/// One stack of stride-2 3×3 convolutions ending in a logit map.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStack {
    pub layers: Vec<ConvKernel>,
}

impl Parameters for PatchStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.layers.visit(&format!("{prefix}.layers"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.layers.visit_mut(&format!("{prefix}.layers"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorState {
    pub scales: Vec<PatchStack>,
    pub instance_norm: bool,
}

impl Parameters for DiscriminatorState {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.scales.visit(&format!("{prefix}scales"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.scales.visit_mut(&format!("{prefix}scales"), f);
    }
}

/// Logit map and all layer outputs of one scale; `features.last()` is the logit map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutput {
    pub features: Vec<Tensor>,
}

impl ScaleOutput {
    pub fn logits(&self) -> &Tensor {
        self.features.last().expect("non-empty stack")
    }
}

struct LayerCache {
    conv: ConvCache,
    norm: Option<InstanceNormCache>,
    pre: Option<Tensor>,
}

pub struct DiscriminatorCache {
    input_dim: (usize, usize, usize),
    scales: Vec<Vec<LayerCache>>,
}

impl DiscriminatorState {
    pub fn init(cfg: &DiscriminatorConfig, seed: Seed) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed.rng();
        let scales = (0..cfg.scales).map(|_| Self::stack(&cfg.channels, &mut rng)).collect();
        Ok(DiscriminatorState {
            scales,
            instance_norm: cfg.instance_norm,
        })
    }

    fn stack<R: Rng>(channels: &[usize], rng: &mut R) -> PatchStack {
        let mut c_in = 3;
        let mut layers: Vec<ConvKernel> = channels
            .iter()
            .map(|&c| {
                let k = ConvKernel::init(c, c_in, 3, 2f64.sqrt(), rng);
                c_in = c;
                k
            })
            .collect();
        layers.push(ConvKernel::init(1, c_in, 3, 1.0, rng));
        PatchStack { layers }
    }

    /// Forward on a `[0, 1]` RGB tensor.
    pub fn forward(&self, img: &Tensor) -> Result<(Vec<ScaleOutput>, DiscriminatorCache)> {
        let (c, h, w) = img.dim();
        if c != 3 {
            return Err(Error::arg(format!("discriminator expects 3 channels, got {c}")));
        }
        let depth = self.scales[0].layers.len();
        let need = 1usize << (depth + self.scales.len() - 1);
        if h < need || w < need {
            return Err(Error::arg(format!(
                "input {h}x{w} too small for {} scales of {depth} stride-2 layers (need {need})",
                self.scales.len()
            )));
        }
        let mut x = img.mapv(|v| 2.0 * v - 1.0);
        let mut outs = Vec::with_capacity(self.scales.len());
        let mut caches = Vec::with_capacity(self.scales.len());
        for (k, stack) in self.scales.iter().enumerate() {
            if k > 0 {
                x = avg_pool2(&x);
            }
            let mut cur = x.clone();
            let mut feats = Vec::with_capacity(stack.layers.len());
            let mut lc = Vec::with_capacity(stack.layers.len());
            for (i, layer) in stack.layers.iter().enumerate() {
                let (y, conv) = layer.forward(&cur, 2);
                let last = i + 1 == stack.layers.len();
                if last {
                    cur = y;
                    lc.push(LayerCache { conv, norm: None, pre: None });
                } else {
                    let (pre, norm) = if self.instance_norm && i > 0 {
                        let n = instance_norm(&y);
                        (n.normalized.clone(), Some(n))
                    } else {
                        (y, None)
                    };
                    cur = leaky_relu(&pre);
                    lc.push(LayerCache { conv, norm, pre: Some(pre) });
                }
                feats.push(cur.clone());
            }
            outs.push(ScaleOutput { features: feats });
            caches.push(lc);
        }
        Ok((
            outs,
            DiscriminatorCache {
                input_dim: img.dim(),
                scales: caches,
            },
        ))
    }

    /// Backward from gradients w.r.t. every feature (`gfeats[scale][layer]`).
    /// Parameter gradients go to `grad` when given; returns `∂L/∂img` in
    /// `[0, 1]` space.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        gfeats: &[Vec<Tensor>],
        mut grad: Option<&mut DiscriminatorState>,
    ) -> Tensor {
        let (_, h, w) = cache.input_dim;
        let mut per_scale: Vec<Tensor> = Vec::with_capacity(self.scales.len());
        for (k, stack) in self.scales.iter().enumerate() {
            let mut g: Option<Tensor> = None;
            for i in (0..stack.layers.len()).rev() {
                let mut gout = gfeats[k][i].clone();
                if let Some(prev) = g.take() {
                    gout += &prev;
                }
                let lc = &cache.scales[k][i];
                if let Some(pre) = &lc.pre {
                    gout = leaky_relu_backward(pre, &gout);
                }
                if let Some(n) = &lc.norm {
                    gout = instance_norm_backward(n, &gout);
                }
                let layer = &stack.layers[i];
                g = Some(match grad.as_deref_mut() {
                    Some(gr) => layer.backward(&lc.conv, &gout, &mut gr.scales[k].layers[i]),
                    None => layer.backward_input(&lc.conv, &gout),
                });
            }
            per_scale.push(g.expect("non-empty stack"));
        }
        // fold coarser scales back through the pooling chain
        let mut acc: Option<Tensor> = None;
        for k in (0..per_scale.len()).rev() {
            let mut gk = per_scale[k].clone();
            if let Some(a) = acc.take() {
                gk += &a;
            }
            acc = Some(if k > 0 {
                avg_pool2_backward(&gk, h >> (k - 1), w >> (k - 1))
            } else {
                gk
            });
        }
        acc.expect("at least one scale") * 2.0
    }
}

/// Per-scale logit maps and features of `img`.
pub fn discriminate(img: &Image, d: &DiscriminatorState) -> Result<Vec<ScaleOutput>> {
    Ok(d.forward(img.to_rgb().data())?.0)
}

/// Gradient buffers with zeros for every feature.
pub fn zero_feature_grads(outs: &[ScaleOutput]) -> Vec<Vec<Tensor>> {
    outs.iter()
        .map(|s| s.features.iter().map(|f| Tensor::zeros(f.dim())).collect())
        .collect()
}
