//! Nested generator: a learned constant is progressively upsampled by
//! residual blocks whose normalization is modulated per pixel by guidance
//! features, consumed deepest first.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{grid, Image};
use crate::nn::{
    col2im, im2col, instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward, resize_nearest,
    resize_nearest_backward, upsample2, upsample2_backward, ConvCache, ConvKernel, InstanceNormCache, Parameters,
    Tensor,
};
use crate::seed::Seed;
use crate::suppress::{encode_backward, encode_forward, init_encoder, EncoderCache, HeadActivation, SuppressionStage};

/// Where the per-block guidance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GuidanceSource {
    /// Features of the suppression encoder run on the input.
    #[default]
    Encoded,
    /// The degraded input itself.
    Input,
    /// A caller-supplied map (for example a face parsing map) with `channels` channels.
    External { channels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub resolution: usize,
    /// Encoder widths, finest first; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub activation: HeadActivation,
    /// Replace every correlation head with a constant unit modulation.
    pub fixed_modulation: bool,
    pub guidance: GuidanceSource,
}

impl GeneratorConfig {
    pub fn n_stages(&self) -> usize {
        self.channels.len()
    }

    /// Side of the learned constant the decoder starts from.
    pub fn base_resolution(&self) -> usize {
        self.resolution >> self.n_stages()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_stages();
        if n == 0 || self.channels.contains(&0) {
            return Err(Error::Config("generator channels must be a non-empty list of positive widths".into()));
        }
        if n >= 16 || self.resolution % (1 << n) != 0 || self.base_resolution() == 0 {
            return Err(Error::Config(format!(
                "resolution {} must be a positive multiple of 2^{n}",
                self.resolution
            )));
        }
        if let GuidanceSource::External { channels: 0 } = self.guidance {
            return Err(Error::Config("external guidance needs at least one channel".into()));
        }
        Ok(())
    }
}

/// Per-pixel scale and shift predicted from guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpadeNorm {
    pub gamma: ConvKernel,
    pub beta: ConvKernel,
}

impl SpadeNorm {
    pub fn init<R: Rng>(channels: usize, guidance_channels: usize, rng: &mut R) -> Self {
        SpadeNorm {
            gamma: ConvKernel::init(channels, guidance_channels, 3, 0.5, rng),
            beta: ConvKernel::init(channels, guidance_channels, 3, 0.5, rng),
        }
    }

    pub fn zeros(channels: usize, guidance_channels: usize) -> Self {
        SpadeNorm {
            gamma: ConvKernel::zeros(channels, guidance_channels, 3),
            beta: ConvKernel::zeros(channels, guidance_channels, 3),
        }
    }
}

impl Parameters for SpadeNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.gamma.visit(&format!("{prefix}.gamma"), f);
        self.beta.visit(&format!("{prefix}.beta"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.gamma.visit_mut(&format!("{prefix}.gamma"), f);
        self.beta.visit_mut(&format!("{prefix}.beta"), f);
    }
}

pub struct SpadeCache {
    norm: InstanceNormCache,
    cols: Array2<f64>,
    gamma: Tensor,
    guidance_dim: (usize, usize, usize),
}

pub fn spade_forward(x: &Tensor, guidance: &Tensor, n: &SpadeNorm) -> Result<(Tensor, SpadeCache)> {
    let (c, h, w) = x.dim();
    if n.gamma.c_out() != c {
        return Err(Error::shape(format!("normalization built for {} channels, got {c}", n.gamma.c_out())));
    }
    n.gamma.check_input(guidance)?;
    let resized = resize_nearest(guidance, h, w);
    let (cols, _, _) = im2col(&resized, n.gamma.size(), 1);
    let gamma = n.gamma.apply_cols(&cols, h, w);
    let beta = n.beta.apply_cols(&cols, h, w);
    let norm = instance_norm(x);
    let out = &norm.normalized * &gamma.mapv(|g| 1.0 + g) + &beta;
    Ok((
        out,
        SpadeCache {
            norm,
            cols,
            gamma,
            guidance_dim: guidance.dim(),
        },
    ))
}

/// `instance_norm(x) ⊙ (1 + γ(g)) + β(g)` with `g` resized to `x`'s grid.
pub fn spade_normalize(x: &Tensor, guidance: &Tensor, n: &SpadeNorm) -> Result<Tensor> {
    Ok(spade_forward(x, guidance, n)?.0)
}

/// Returns `(∂L/∂x, ∂L/∂guidance)`.
pub fn spade_backward(n: &SpadeNorm, cache: &SpadeCache, gy: &Tensor, grad: &mut SpadeNorm) -> (Tensor, Tensor) {
    let gnorm = gy * &cache.gamma.mapv(|g| 1.0 + g);
    let ggamma = gy * &cache.norm.normalized;
    let gx = instance_norm_backward(&cache.norm, &gnorm);
    let mut gcols = n.gamma.backward_cols(&cache.cols, &ggamma, &mut grad.gamma);
    gcols += &n.beta.backward_cols(&cache.cols, gy, &mut grad.beta);
    let (_, h, w) = gy.dim();
    let gc = cache.guidance_dim.0;
    let gresized = col2im(&gcols, (gc, h, w), n.gamma.size(), 1);
    let gg = resize_nearest_backward(&gresized, cache.guidance_dim.1, cache.guidance_dim.2);
    (gx, gg)
}

/// 2× upsampling followed by a residual unit of two guided legs plus a skip.
#[derive(Debug, Clone, PartialEq)]
pub struct SpadeBlock {
    pub norm0: SpadeNorm,
    pub conv0: ConvKernel,
    pub norm1: SpadeNorm,
    pub conv1: ConvKernel,
    /// 1×1 projection on the skip path when widths differ.
    pub shortcut: Option<ConvKernel>,
}

impl SpadeBlock {
    pub fn init<R: Rng>(fin: usize, fout: usize, guidance_channels: usize, rng: &mut R) -> Self {
        SpadeBlock {
            norm0: SpadeNorm::init(fin, guidance_channels, rng),
            conv0: ConvKernel::init(fout, fin, 3, 1.0, rng),
            norm1: SpadeNorm::init(fout, guidance_channels, rng),
            conv1: ConvKernel::init(fout, fout, 3, 0.5, rng),
            shortcut: (fin != fout).then(|| ConvKernel::init(fout, fin, 1, 1.0, rng)),
        }
    }

    pub fn fin(&self) -> usize {
        self.conv0.c_in()
    }

    pub fn fout(&self) -> usize {
        self.conv0.c_out()
    }
}

impl Parameters for SpadeBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm0.visit(&format!("{prefix}.norm0"), f);
        self.conv0.visit(&format!("{prefix}.conv0"), f);
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.shortcut.visit(&format!("{prefix}.shortcut"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm0.visit_mut(&format!("{prefix}.norm0"), f);
        self.conv0.visit_mut(&format!("{prefix}.conv0"), f);
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.conv1.visit_mut(&format!("{prefix}.conv1"), f);
        self.shortcut.visit_mut(&format!("{prefix}.shortcut"), f);
    }
}

pub struct BlockCache {
    spade0: SpadeCache,
    pre0: Tensor,
    conv0: ConvCache,
    spade1: SpadeCache,
    pre1: Tensor,
    conv1: ConvCache,
    shortcut: Option<ConvCache>,
}

pub fn replenish_forward(x: &Tensor, guidance: &Tensor, b: &SpadeBlock) -> Result<(Tensor, BlockCache)> {
    let x = &upsample2(x);
    let (pre0, spade0) = spade_forward(x, guidance, &b.norm0)?;
    let (h0, conv0) = b.conv0.forward(&leaky_relu(&pre0), 1);
    let (pre1, spade1) = spade_forward(&h0, guidance, &b.norm1)?;
    let (h1, conv1) = b.conv1.forward(&leaky_relu(&pre1), 1);
    let (skip, shortcut) = match &b.shortcut {
        Some(k) => {
            let (s, c) = k.forward(x, 1);
            (s, Some(c))
        }
        None => (x.clone(), None),
    };
    let out = skip + h1;
    Ok((
        out,
        BlockCache {
            spade0,
            pre0,
            conv0,
            spade1,
            pre1,
            conv1,
            shortcut,
        },
    ))
}

/// One decoder block on `u = up2(x)`: `skip(u) + conv1(σ(N1(conv0(σ(N0(u, g))), g)))`,
/// with `g` nearest-resized to the doubled grid.
pub fn replenish_block(x: &Tensor, guidance: &Tensor, b: &SpadeBlock) -> Result<Tensor> {
    Ok(replenish_forward(x, guidance, b)?.0)
}

/// Returns `(∂L/∂x, ∂L/∂guidance)`.
pub fn replenish_backward(b: &SpadeBlock, cache: &BlockCache, gy: &Tensor, grad: &mut SpadeBlock) -> (Tensor, Tensor) {
    let mut gx = match (&b.shortcut, &cache.shortcut) {
        (Some(k), Some(c)) => k.backward(c, gy, grad.shortcut.as_mut().expect("gradient mirrors model")),
        _ => gy.clone(),
    };
    let g1 = b.conv1.backward(&cache.conv1, gy, &mut grad.conv1);
    let g1 = leaky_relu_backward(&cache.pre1, &g1);
    let (gh0, mut gguide) = spade_backward(&b.norm1, &cache.spade1, &g1, &mut grad.norm1);
    let g0 = b.conv0.backward(&cache.conv0, &gh0, &mut grad.conv0);
    let g0 = leaky_relu_backward(&cache.pre0, &g0);
    let (gx0, gg0) = spade_backward(&b.norm0, &cache.spade0, &g0, &mut grad.norm0);
    gx += &gx0;
    gguide += &gg0;
    (upsample2_backward(&gx), gguide)
}

/// Encoder, decoder blocks, learned seed tensor and RGB projection.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    pub encoder: Vec<SuppressionStage>,
    pub blocks: Vec<SpadeBlock>,
    pub head_const: Tensor,
    pub to_rgb: ConvKernel,
    pub guidance: GuidanceSource,
}

impl Parameters for GeneratorState {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&format!("{prefix}encoder"), f);
        self.blocks.visit(&format!("{prefix}blocks"), f);
        self.head_const.visit(&format!("{prefix}head_const"), f);
        self.to_rgb.visit(&format!("{prefix}to_rgb"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&format!("{prefix}encoder"), f);
        self.blocks.visit_mut(&format!("{prefix}blocks"), f);
        self.head_const.visit_mut(&format!("{prefix}head_const"), f);
        self.to_rgb.visit_mut(&format!("{prefix}to_rgb"), f);
    }
}

/// Everything [`GeneratorState::backward`] needs from one forward pass.
pub struct GeneratorCache {
    encoder: Option<EncoderCache>,
    guidance_dims: Vec<(usize, usize, usize)>,
    active: Vec<bool>,
    blocks: Vec<BlockCache>,
    last: Tensor,
    to_rgb: ConvCache,
    out_tanh: Tensor,
}

impl GeneratorState {
    pub fn init(cfg: &GeneratorConfig, seed: Seed) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed.rng();
        let n = cfg.n_stages();
        let ch = &cfg.channels;
        let head = (!cfg.fixed_modulation).then_some(cfg.activation);
        let encoder = match cfg.guidance {
            GuidanceSource::Encoded => init_encoder(3, ch, head, &mut rng),
            _ => Vec::new(),
        };
        let guidance_channels = |s: usize| match cfg.guidance {
            GuidanceSource::Encoded => ch[s],
            GuidanceSource::Input => 3,
            GuidanceSource::External { channels } => channels,
        };
        let blocks = (0..n)
            .map(|k| {
                let s = n - 1 - k;
                let fout = if s == 0 { ch[0] } else { ch[s - 1] };
                SpadeBlock::init(ch[s], fout, guidance_channels(s), &mut rng)
            })
            .collect();
        let r0 = cfg.base_resolution();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let head_const = Array3::from_shape_fn((ch[n - 1], r0, r0), |_| normal.sample(&mut rng));
        let to_rgb = ConvKernel::init(3, ch[0], 3, 1.0, &mut rng);
        Ok(GeneratorState {
            encoder,
            blocks,
            head_const,
            to_rgb,
            guidance: cfg.guidance,
        })
    }

    pub fn n_stages(&self) -> usize {
        self.blocks.len()
    }

    pub fn resolution(&self) -> usize {
        self.head_const.dim().1 << self.n_stages()
    }

    /// Drops every correlation head so all suppression stages use unit modulation.
    pub fn with_fixed_modulation(mut self) -> Self {
        self.encoder.iter_mut().for_each(|s| s.head = None);
        self
    }

    /// Forward on a `[0, 1]` RGB tensor. `active[s]` false replaces guidance
    /// level `s` with zeros. `external` is required for external guidance.
    pub fn forward(
        &self,
        lq: &Tensor,
        external: Option<&Tensor>,
        active: Option<&[bool]>,
    ) -> Result<(Tensor, GeneratorCache)> {
        let n = self.n_stages();
        let r = self.resolution();
        if lq.dim() != (3, r, r) {
            return Err(Error::arg(format!(
                "generator expects a 3x{r}x{r} input, got {:?}",
                lq.dim()
            )));
        }
        let active: Vec<bool> = match active {
            Some(a) if a.len() != n => return Err(Error::arg(format!("active mask has {} entries, need {n}", a.len()))),
            Some(a) => a.to_vec(),
            None => vec![true; n],
        };
        let signed = lq.mapv(|v| 2.0 * v - 1.0);
        let (levels, encoder): (Vec<Tensor>, Option<EncoderCache>) = match self.guidance {
            GuidanceSource::Encoded => {
                let (f, c) = encode_forward(&signed, &self.encoder)?;
                (f, Some(c))
            }
            GuidanceSource::Input => (vec![signed.clone(); n], None),
            GuidanceSource::External { channels } => {
                let g = external.ok_or_else(|| Error::arg("this generator needs an external guidance map"))?;
                if g.dim().0 != channels {
                    return Err(Error::arg(format!("guidance map has {} channels, need {channels}", g.dim().0)));
                }
                (vec![g.clone(); n], None)
            }
        };
        let guidance_dims = levels.iter().map(|t| t.dim()).collect();
        let mut h = self.head_const.clone();
        let mut blocks = Vec::with_capacity(n);
        for (k, block) in self.blocks.iter().enumerate() {
            let s = n - 1 - k;
            let zeros;
            let g = if active[s] {
                &levels[s]
            } else {
                zeros = Array3::zeros(levels[s].dim());
                &zeros
            };
            let (out, cache) = replenish_forward(&h, g, block)?;
            h = out;
            blocks.push(cache);
        }
        let (pre, to_rgb) = self.to_rgb.forward(&leaky_relu(&h), 1);
        let out_tanh = pre.mapv(f64::tanh);
        let out = out_tanh.mapv(|t| (t + 1.0) * 0.5);
        Ok((
            out,
            GeneratorCache {
                encoder,
                guidance_dims,
                active,
                blocks,
                last: h,
                to_rgb,
                out_tanh,
            },
        ))
    }

    /// Accumulates parameter gradients for `∂L/∂output` into `grad`.
    pub fn backward(&self, cache: &GeneratorCache, gout: &Tensor, grad: &mut GeneratorState) {
        let n = self.n_stages();
        let gpre = ndarray::Zip::from(gout)
            .and(&cache.out_tanh)
            .map_collect(|&g, &t| g * 0.5 * (1.0 - t * t));
        let glr = self.to_rgb.backward(&cache.to_rgb, &gpre, &mut grad.to_rgb);
        let mut gh = leaky_relu_backward(&cache.last, &glr);
        let mut gguide: Vec<Tensor> = cache.guidance_dims.iter().map(|&d| Array3::zeros(d)).collect();
        for k in (0..n).rev() {
            let s = n - 1 - k;
            let (gx, gg) = replenish_backward(&self.blocks[k], &cache.blocks[k], &gh, &mut grad.blocks[k]);
            if cache.active[s] {
                gguide[s] = gg;
            }
            gh = gx;
        }
        grad.head_const += &gh;
        if let Some(enc) = &cache.encoder {
            encode_backward(&self.encoder, enc, &gguide, &mut grad.encoder);
        }
    }
}

/// Renovates one image at the generator's working resolution.
pub fn generator_forward(img_lq: &Image, g: &GeneratorState) -> Result<Image> {
    generate(img_lq, g, None, None)
}

/// Forward with optional external guidance and stage mask.
pub fn generate(img_lq: &Image, g: &GeneratorState, external: Option<&Image>, active: Option<&[bool]>) -> Result<Image> {
    let ext = external.map(|e| e.to_signed());
    let (out, _) = g.forward(img_lq.to_rgb().data(), ext.as_ref(), active)?;
    Ok(Image::from_clamped(out))
}

/// Forward with the guidance of every stage not in `active` replaced by zeros.
pub fn ablate_stage_forward(img_lq: &Image, g: &GeneratorState, active: &BTreeSet<usize>) -> Result<Image> {
    let n = g.n_stages();
    if let Some(bad) = active.iter().find(|&&s| s >= n) {
        return Err(Error::arg(format!("stage index {bad} out of range 0..{n}")));
    }
    let mask: Vec<bool> = (0..n).map(|s| active.contains(&s)).collect();
    generate(img_lq, g, None, Some(&mask))
}

/// The input followed by outputs with guidance enabled deepest-first:
/// none, the deepest level, the two deepest, ..., all levels.
pub fn stage_probe_grid(img_lq: &Image, g: &GeneratorState) -> Result<Image> {
    let n = g.n_stages();
    let mut panels = vec![img_lq.to_rgb()];
    for m in 0..=n {
        let active: BTreeSet<usize> = (n - m..n).collect();
        panels.push(ablate_stage_forward(img_lq, g, &active)?);
    }
    let cols = panels.len();
    grid(&panels, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input, check_parameters};
    use crate::nn::ParametersExt;
    use crate::synth::synth_face;

    fn random(dim: (usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = Seed(seed).rng();
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    fn tiny_cfg() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 16,
            channels: vec![4, 4],
            activation: HeadActivation::Sigmoid,
            fixed_modulation: false,
            guidance: GuidanceSource::Encoded,
        }
    }

    #[test]
    fn spade_zero_convs_is_plain_norm() {
        let x = random((3, 4, 5), 1);
        let g = random((2, 2, 3), 2);
        let out = spade_normalize(&x, &g, &SpadeNorm::zeros(3, 2)).unwrap();
        assert!((&out - &instance_norm(&x).normalized).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn spade_constant_input_yields_beta() {
        let x = Array3::from_shape_fn((2, 4, 4), |(c, _, _)| c as f64 + 0.5);
        let g = random((3, 4, 4), 3);
        let n = SpadeNorm::init(2, 3, &mut Seed(4).rng());
        let out = spade_normalize(&x, &g, &n).unwrap();
        let beta = n.beta.apply(&g, 1);
        assert!((&out - &beta).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn spade_mean_follows_beta_when_gamma_is_zero() {
        let x = random((2, 6, 6), 5);
        let g = random((3, 3, 3), 6);
        let mut n = SpadeNorm::init(2, 3, &mut Seed(7).rng());
        n.gamma = ConvKernel::zeros(2, 3, 3);
        let out = spade_normalize(&x, &g, &n).unwrap();
        let beta = n.beta.apply(&resize_nearest(&g, 6, 6), 1);
        for c in 0..2 {
            let a = out.index_axis(ndarray::Axis(0), c).mean().unwrap();
            let b = beta.index_axis(ndarray::Axis(0), c).mean().unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spade_gradients() {
        let x = random((3, 4, 4), 8);
        let g = random((2, 2, 2), 9);
        let n = SpadeNorm::init(3, 2, &mut Seed(10).rng());
        let (y, cache) = spade_forward(&x, &g, &n).unwrap();
        let r = random(y.dim(), 11);
        let mut grad = n.zeros_like();
        let (gx, gg) = spade_backward(&n, &cache, &r, &mut grad);
        let loss = |n: &SpadeNorm, x: &Tensor, g: &Tensor| (&spade_normalize(x, g, n).unwrap() * &r).sum();
        let p = check_parameters(&n, &grad, 200, 1e-5, |m| loss(m, &x, &g));
        assert!(p.max_rel_error < 1e-4, "{p:?}");
        let i = check_input(&x, &gx, 200, 1e-5, |x| loss(&n, x, &g));
        assert!(i.max_rel_error < 1e-4, "{i:?}");
        let j = check_input(&g, &gg, 200, 1e-5, |g| loss(&n, &x, g));
        assert!(j.max_rel_error < 1e-4, "{j:?}");
    }

    #[test]
    fn replenish_shapes_and_gradients() {
        let x = random((8, 4, 4), 12);
        let g = random((5, 4, 4), 13);
        let b = SpadeBlock::init(8, 6, 5, &mut Seed(14).rng());
        let (y, cache) = replenish_forward(&x, &g, &b).unwrap();
        assert_eq!(y.dim(), (6, 8, 8));
        assert_eq!(y, replenish_block(&x, &g, &b).unwrap());
        let r = random(y.dim(), 15);
        let mut grad = b.zeros_like();
        let (gx, gg) = replenish_backward(&b, &cache, &r, &mut grad);
        let loss = |b: &SpadeBlock, x: &Tensor, g: &Tensor| (&replenish_block(x, g, b).unwrap() * &r).sum();
        let p = check_parameters(&b, &grad, 60, 1e-4, |m| loss(m, &x, &g));
        assert!(p.max_rel_error < 1e-4, "{p:?}");
        let i = check_input(&x, &gx, 64, 1e-5, |x| loss(&b, x, &g));
        assert!(i.max_rel_error < 1e-4, "{i:?}");
        let j = check_input(&g, &gg, 64, 1e-5, |g| loss(&b, &x, g));
        assert!(j.max_rel_error < 1e-4, "{j:?}");
    }

    #[test]
    fn end_to_end_gradients() {
        let g = GeneratorState::init(&tiny_cfg(), Seed(16)).unwrap();
        let x = synth_face(16, Seed(17)).into_data();
        let (y, cache) = g.forward(&x, None, None).unwrap();
        let r = random(y.dim(), 18);
        let mut grad = g.zeros_like();
        g.backward(&cache, &r, &mut grad);
        let res = check_parameters(&g, &grad, 12, 1e-5, |m| (&m.forward(&x, None, None).unwrap().0 * &r).sum());
        assert!(res.max_rel_error < 1e-3, "{res:?}");
    }

    #[test]
    fn output_contract() {
        let g = GeneratorState::init(&tiny_cfg(), Seed(19)).unwrap();
        let img = synth_face(16, Seed(20));
        let out = generator_forward(&img, &g).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (16, 16, 3));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out, generator_forward(&img, &g).unwrap());
        assert!(generator_forward(&synth_face(32, Seed(1)), &g).is_err());
    }

    #[test]
    fn ablation_contract() {
        let g = GeneratorState::init(&tiny_cfg(), Seed(21)).unwrap();
        let a = synth_face(16, Seed(22));
        let b = synth_face(16, Seed(23));
        let all: BTreeSet<usize> = [0, 1].into();
        assert_eq!(ablate_stage_forward(&a, &g, &all).unwrap(), generator_forward(&a, &g).unwrap());
        let none = BTreeSet::new();
        assert_eq!(ablate_stage_forward(&a, &g, &none).unwrap(), ablate_stage_forward(&b, &g, &none).unwrap());
        assert!(ablate_stage_forward(&a, &g, &[2].into()).is_err());
        let grid = stage_probe_grid(&a, &g).unwrap();
        assert_eq!((grid.height(), grid.width()), (16, 16 * 4));
    }

    #[test]
    fn descent_step_reduces_reconstruction_error() {
        let g = GeneratorState::init(&tiny_cfg(), Seed(24)).unwrap();
        let x = synth_face(16, Seed(25)).into_data();
        let y = synth_face(16, Seed(26)).into_data();
        let objective = |m: &GeneratorState| {
            let (out, cache) = m.forward(&x, None, None).unwrap();
            let d = &out - &y;
            (d.iter().map(|v| v * v).sum::<f64>(), d * 2.0, cache)
        };
        let (before, gout, cache) = objective(&g);
        let mut grad = g.zeros_like();
        g.backward(&cache, &gout, &mut grad);
        let mut stepped = g.clone();
        stepped.add_scaled(&grad, -1e-4);
        assert!(objective(&stepped).0 < before);
    }

    #[test]
    fn fixed_modulation_matches_headless_encoder() {
        let g = GeneratorState::init(&tiny_cfg(), Seed(27)).unwrap();
        let fixed = g.clone().with_fixed_modulation();
        assert!(fixed.encoder.iter().all(|s| s.head.is_none()));
        assert_eq!(fixed.blocks, g.blocks);
        let img = synth_face(16, Seed(28));
        assert_ne!(generator_forward(&img, &fixed).unwrap(), generator_forward(&img, &g).unwrap());
    }

    #[test]
    fn input_and_external_guidance() {
        let mut cfg = tiny_cfg();
        cfg.guidance = GuidanceSource::Input;
        let g = GeneratorState::init(&cfg, Seed(29)).unwrap();
        assert!(g.encoder.is_empty());
        let img = synth_face(16, Seed(30));
        generator_forward(&img, &g).unwrap();
        cfg.guidance = GuidanceSource::External { channels: 1 };
        let g = GeneratorState::init(&cfg, Seed(31)).unwrap();
        assert!(generator_forward(&img, &g).is_err());
        let map = Image::constant(16, 16, crate::image::ColorSpace::Gray, 0.5);
        generate(&img, &g, Some(&map), None).unwrap();
    }
}
