//! Content-adaptive suppression convolution and the encoder built from it.
//!
//! Every kernel tap is modulated by a learned correlation between the
//! center pixel and the neighbor it reads: `y_i = Σ_j φ(f_j, f_i) · W_{j−i} f_j + b`
//! with `φ(a, b) = act(⟨G(a), G(b)⟩)`. When `φ ≡ 1` this is an ordinary
//! convolution.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{col2im, im2col, leaky_relu, leaky_relu_backward, ConvKernel, Dense, Parameters, Tensor};

/// Spatial kernel size of every suppression convolution.
pub const KERNEL_SIZE: usize = 3;
const TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;
const CENTER: usize = TAPS / 2;

/// Plain reflect-padded convolution preserving spatial dims.
pub fn conv2d(f: &Tensor, k: &ConvKernel) -> Result<Tensor> {
    k.check_input(f)?;
    Ok(k.apply(f, 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    #[default]
    Sigmoid,
    Tanh,
}

impl HeadActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            HeadActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            HeadActivation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the output value.
    fn slope(self, out: f64) -> f64 {
        match self {
            HeadActivation::Sigmoid => out * (1.0 - out),
            HeadActivation::Tanh => 1.0 - out * out,
        }
    }
}

/// Per-pixel perceptron `G` projecting features into the correlation space,
/// with `tanh` between layers and nothing after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHead {
    pub layers: Vec<Dense>,
    pub activation: HeadActivation,
}

/// Forward intermediates of [`CorrelationHead::project`].
struct ProjectCache {
    /// Input to every layer.
    inputs: Vec<Array2<f64>>,
}

impl CorrelationHead {
    /// Default correlation width for `channels` input channels.
    pub fn default_dim(channels: usize) -> usize {
        (channels / 8).max(4)
    }

    /// Two layers `C → D → D`.
    pub fn init<R: Rng>(channels: usize, dim: usize, activation: HeadActivation, rng: &mut R) -> Self {
        CorrelationHead {
            layers: vec![Dense::init(dim, channels, 1.0, rng), Dense::init(dim, dim, 1.0, rng)],
            activation,
        }
    }

    /// `G` as the identity on `R^C`.
    pub fn identity(channels: usize, activation: HeadActivation) -> Self {
        CorrelationHead {
            layers: vec![Dense::identity(channels)],
            activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn dim(&self) -> usize {
        self.layers.last().expect("head has layers").outputs()
    }

    fn project(&self, x: &Array2<f64>) -> (Array2<f64>, ProjectCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.apply(&h);
            if i + 1 < self.layers.len() {
                y.mapv_inplace(f64::tanh);
            }
            inputs.push(std::mem::replace(&mut h, y));
        }
        (h, ProjectCache { inputs })
    }

    fn project_backward(&self, cache: &ProjectCache, gp: Array2<f64>, grad: &mut CorrelationHead) -> Array2<f64> {
        let mut g = gp;
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&cache.inputs[i], &g, &mut grad.layers[i]);
            if i > 0 {
                // inputs[i] is tanh of the previous layer's pre-activation
                g.zip_mut_with(&cache.inputs[i], |gv, &t| *gv *= 1.0 - t * t);
            }
        }
        g
    }
}

impl Parameters for CorrelationHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.layers.visit(&format!("{prefix}.layers"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.layers.visit_mut(&format!("{prefix}.layers"), f);
    }
}

/// `φ(f_i, f_j) = act(⟨G(f_i), G(f_j)⟩)`.
pub fn correlation_phi(f_i: &[f64], f_j: &[f64], head: &CorrelationHead) -> f64 {
    let c = f_i.len();
    let x = Array2::from_shape_fn((c, 2), |(k, n)| if n == 0 { f_i[k] } else { f_j[k] });
    let (p, _) = head.project(&x);
    head.activation.apply(p.column(0).dot(&p.column(1)))
}

/// One encoder stage: a suppression convolution, optionally stride 2.
/// Without a head the modulation is fixed at one (content-agnostic path).
#[derive(Debug, Clone, PartialEq)]
pub struct SuppressionStage {
    pub kernel: ConvKernel,
    pub head: Option<CorrelationHead>,
    pub downsample: bool,
}

/// Intermediates of [`suppression_forward`] needed by [`suppression_backward`].
pub struct SuppressionCache {
    in_dim: (usize, usize, usize),
    cols: Array2<f64>,
    modulated: Array2<f64>,
    head: Option<HeadCache>,
}

struct HeadCache {
    project: ProjectCache,
    pcols: Array2<f64>,
    phi: Array2<f64>,
}

impl SuppressionStage {
    pub fn init<R: Rng>(c_in: usize, c_out: usize, head: Option<HeadActivation>, downsample: bool, rng: &mut R) -> Self {
        SuppressionStage {
            kernel: ConvKernel::init(c_out, c_in, KERNEL_SIZE, 1.0, rng),
            head: head.map(|a| CorrelationHead::init(c_in, CorrelationHead::default_dim(c_in), a, rng)),
            downsample,
        }
    }

    fn stride(&self) -> usize {
        if self.downsample {
            2
        } else {
            1
        }
    }

    pub fn c_out(&self) -> usize {
        self.kernel.c_out()
    }
}

impl Parameters for SuppressionStage {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.kernel.visit(&format!("{prefix}.kernel"), f);
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.kernel.visit_mut(&format!("{prefix}.kernel"), f);
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }
}

fn flat_pixels(x: &Tensor) -> Array2<f64> {
    let (c, h, w) = x.dim();
    x.as_standard_layout().into_owned().into_shape_with_order((c, h * w)).expect("contiguous")
}

pub fn suppression_forward(f: &Tensor, stage: &SuppressionStage) -> Result<(Tensor, SuppressionCache)> {
    stage.kernel.check_input(f)?;
    if stage.kernel.size() != KERNEL_SIZE {
        return Err(Error::shape(format!("suppression kernels must be {KERNEL_SIZE}x{KERNEL_SIZE}")));
    }
    let (c, h, w) = f.dim();
    let stride = stage.stride();
    let (cols, ho, wo) = im2col(f, KERNEL_SIZE, stride);
    let Some(head) = &stage.head else {
        let y = stage.kernel.apply_cols(&cols, ho, wo);
        return Ok((
            y,
            SuppressionCache {
                in_dim: (c, h, w),
                modulated: cols.clone(),
                cols,
                head: None,
            },
        ));
    };
    if head.in_channels() != c {
        return Err(Error::shape(format!("correlation head expects {} channels, got {c}", head.in_channels())));
    }
    let d = head.dim();
    let (p, project) = head.project(&flat_pixels(f));
    let p = p.into_shape_with_order((d, h, w)).expect("projection shape");
    let (pcols, _, _) = im2col(&p, KERNEL_SIZE, stride);
    let n = ho * wo;
    let mut phi = Array2::<f64>::zeros((TAPS, n));
    // z[k, o] = Σ_d P_center[d, o] · P_k[d, o]
    for di in 0..d {
        let center = pcols.row(di * TAPS + CENTER).to_owned();
        for k in 0..TAPS {
            let nb = pcols.row(di * TAPS + k);
            let mut z = phi.row_mut(k);
            ndarray::Zip::from(&mut z).and(&nb).and(&center).for_each(|zv, &a, &b| *zv += a * b);
        }
    }
    phi.mapv_inplace(|z| head.activation.apply(z));
    let mut modulated = cols.clone();
    for (r, mut row) in modulated.axis_iter_mut(Axis(0)).enumerate() {
        row *= &phi.row(r % TAPS);
    }
    let y = stage.kernel.apply_cols(&modulated, ho, wo);
    Ok((
        y,
        SuppressionCache {
            in_dim: (c, h, w),
            cols,
            modulated,
            head: Some(HeadCache { project, pcols, phi }),
        },
    ))
}

/// Accumulates parameter gradients into `grad` and returns `∂L/∂F`.
pub fn suppression_backward(
    stage: &SuppressionStage,
    cache: &SuppressionCache,
    gy: &Tensor,
    grad: &mut SuppressionStage,
) -> Tensor {
    let stride = stage.stride();
    let gmod = stage.kernel.backward_cols(&cache.modulated, gy, &mut grad.kernel);
    let (Some(head), Some(hc)) = (&stage.head, &cache.head) else {
        return col2im(&gmod, cache.in_dim, KERNEL_SIZE, stride);
    };
    let (_, h, w) = cache.in_dim;
    let n = hc.phi.dim().1;
    let mut gcols = gmod.clone();
    let mut gphi = Array2::<f64>::zeros((TAPS, n));
    for (r, mut row) in gcols.axis_iter_mut(Axis(0)).enumerate() {
        let k = r % TAPS;
        let mut gp = gphi.row_mut(k);
        ndarray::Zip::from(&mut gp)
            .and(&row)
            .and(&cache.cols.row(r))
            .for_each(|g, &gm, &x| *g += gm * x);
        row *= &hc.phi.row(k);
    }
    let mut gx = col2im(&gcols, cache.in_dim, KERNEL_SIZE, stride);
    let act = head.activation;
    let gz = ndarray::Zip::from(&gphi).and(&hc.phi).map_collect(|&g, &p| g * act.slope(p));
    let d = head.dim();
    let mut gpcols = Array2::<f64>::zeros(hc.pcols.dim());
    for di in 0..d {
        let center = hc.pcols.row(di * TAPS + CENTER).to_owned();
        let mut gcenter = ndarray::Array1::<f64>::zeros(n);
        for k in 0..TAPS {
            let nb = hc.pcols.row(di * TAPS + k);
            let gzk = gz.row(k);
            ndarray::Zip::from(gpcols.row_mut(di * TAPS + k))
                .and(&gzk)
                .and(&center)
                .for_each(|g, &z, &c| *g += z * c);
            ndarray::Zip::from(&mut gcenter).and(&gzk).and(&nb).for_each(|g, &z, &v| *g += z * v);
        }
        let mut row = gpcols.row_mut(di * TAPS + CENTER);
        row += &gcenter;
    }
    let gp = col2im(&gpcols, (d, h, w), KERNEL_SIZE, stride);
    let gp = flat_pixels(&gp);
    let gfeat = head.project_backward(&hc.project, gp, grad.head.as_mut().expect("gradient mirrors model"));
    gx += &gfeat.into_shape_with_order(cache.in_dim).expect("input shape");
    gx
}

/// Suppression convolution, decimated by 2 when the stage downsamples.
pub fn suppression_conv(f: &Tensor, stage: &SuppressionStage) -> Result<Tensor> {
    Ok(suppression_forward(f, stage)?.0)
}

/// Channel schedule of an encoder built by [`init_encoder`].
pub const DEFAULT_CHANNELS: [usize; 4] = [64, 128, 256, 512];

/// Downsampling stages `3 → channels[0] → … → channels[N−1]`.
pub fn init_encoder<R: Rng>(
    in_channels: usize,
    channels: &[usize],
    head: Option<HeadActivation>,
    rng: &mut R,
) -> Vec<SuppressionStage> {
    let mut c_in = in_channels;
    channels
        .iter()
        .map(|&c| {
            let s = SuppressionStage::init(c_in, c, head, true, rng);
            c_in = c;
            s
        })
        .collect()
}

/// Per-stage intermediates of [`encode_forward`].
pub struct EncoderCache {
    stages: Vec<(SuppressionCache, Tensor)>,
}

/// Runs the stages on a `[-1, 1]` tensor; every stage output passes through a
/// leaky rectifier and is kept as one level of guidance.
pub fn encode_forward(x: &Tensor, stages: &[SuppressionStage]) -> Result<(Vec<Tensor>, EncoderCache)> {
    let (_, h, w) = x.dim();
    let n = stages.len();
    if n == 0 || n >= usize::BITS as usize || h < (1 << n) || w < (1 << n) {
        return Err(Error::arg(format!("input {h}x{w} too small for {n} downsampling stages")));
    }
    let mut feats = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    let mut cur = x.clone();
    for s in stages {
        let (pre, cache) = suppression_forward(&cur, s)?;
        cur = leaky_relu(&pre);
        feats.push(cur.clone());
        caches.push((cache, pre));
    }
    Ok((feats, EncoderCache { stages: caches }))
}

/// Backward through the encoder given a gradient for every emitted feature.
pub fn encode_backward(
    stages: &[SuppressionStage],
    cache: &EncoderCache,
    gfeats: &[Tensor],
    grad: &mut [SuppressionStage],
) -> Tensor {
    let mut g: Option<Tensor> = None;
    for i in (0..stages.len()).rev() {
        let mut gout = gfeats[i].clone();
        if let Some(prev) = g.take() {
            gout += &prev;
        }
        let (sc, pre) = &cache.stages[i];
        let gpre = leaky_relu_backward(pre, &gout);
        g = Some(suppression_backward(&stages[i], sc, &gpre, &mut grad[i]));
    }
    g.expect("at least one stage")
}

/// Guidance features of `img`, finest first: feature `s` is `H/2^{s+1} × W/2^{s+1}`.
pub fn encode_hierarchy(img: &Image, stages: &[SuppressionStage]) -> Result<Vec<Tensor>> {
    Ok(encode_forward(&img.to_signed(), stages)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input, check_parameters};
    use crate::nn::ParametersExt;
    use crate::seed::Seed;
    use ndarray::Array3;

    fn random(dim: (usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = Seed(seed).rng();
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    fn stage(c_in: usize, c_out: usize, act: HeadActivation, down: bool, seed: u64) -> SuppressionStage {
        SuppressionStage::init(c_in, c_out, Some(act), down, &mut Seed(seed).rng())
    }

    #[test]
    fn conv2d_identity_and_ones() {
        let x = random((3, 5, 7), 1);
        assert_eq!(conv2d(&x, &ConvKernel::identity(3, 3)).unwrap(), x);
        let mut k = ConvKernel::zeros(1, 1, 3);
        k.weight.fill(1.0);
        let c = Array3::from_elem((1, 4, 4), 0.7);
        let y = conv2d(&c, &k).unwrap();
        assert!(y.iter().all(|v| (v - 6.3).abs() < 1e-12));
        assert!(conv2d(&random((2, 4, 4), 2), &k).is_err());
    }

    #[test]
    fn phi_closed_forms() {
        let head = CorrelationHead::identity(3, HeadActivation::Sigmoid);
        let f = [0.3, -0.2, 0.5];
        let n2: f64 = f.iter().map(|v| v * v).sum();
        assert!((correlation_phi(&f, &f, &head) - 1.0 / (1.0 + (-n2).exp())).abs() < 1e-15);
        assert_eq!(correlation_phi(&[0.0; 3], &f, &head), 0.5);
        let mut rng = Seed(3).rng();
        let mut lin = CorrelationHead::init(3, 4, HeadActivation::Tanh, &mut rng);
        lin.layers.iter_mut().for_each(|l| l.bias.fill(0.0));
        assert_eq!(correlation_phi(&[0.0; 3], &f, &lin), 0.0);
    }

    #[test]
    fn unit_modulation_reduces_to_conv() {
        let x = random((4, 6, 6), 4);
        let mut s = stage(4, 5, HeadActivation::Sigmoid, false, 5);
        s.head = None;
        let y = suppression_conv(&x, &s).unwrap();
        let r = conv2d(&x, &s.kernel).unwrap();
        assert!((&y - &r).iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn constant_map_factors_out_phi() {
        let f = [0.4, -0.1, 0.25];
        let x = Array3::from_shape_fn((3, 5, 5), |(c, _, _)| f[c]);
        let s = stage(3, 2, HeadActivation::Sigmoid, false, 6);
        let phi = correlation_phi(&f, &f, s.head.as_ref().unwrap());
        let y = suppression_conv(&x, &s).unwrap();
        let mut bare = s.kernel.clone();
        bare.bias.fill(0.0);
        let r = conv2d(&x, &bare).unwrap();
        for o in 0..2 {
            for (a, b) in y.index_axis(Axis(0), o).iter().zip(r.index_axis(Axis(0), o).iter()) {
                assert!((a - (phi * b + s.kernel.bias[o])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn not_linear_in_input() {
        let s = stage(3, 3, HeadActivation::Sigmoid, false, 7);
        let x = random((3, 6, 6), 8);
        let y1 = suppression_conv(&x, &s).unwrap();
        let y2 = suppression_conv(&(&x * 2.0), &s).unwrap();
        let b = s.kernel.bias.clone().insert_axis(Axis(1)).insert_axis(Axis(2));
        let lhs = &y2 - &b;
        let rhs = (&y1 - &b) * 2.0;
        assert!((&lhs - &rhs).iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn stride_two_shapes() {
        let s = stage(3, 4, HeadActivation::Sigmoid, true, 9);
        assert_eq!(suppression_conv(&random((3, 8, 6), 1), &s).unwrap().dim(), (4, 4, 3));
    }

    fn grad_case(act: HeadActivation, down: bool) {
        let s = stage(4, 3, act, down, 11);
        let x = random((4, 6, 6), 12);
        let (y, cache) = suppression_forward(&x, &s).unwrap();
        let r = random(y.dim(), 13);
        let mut g = s.zeros_like();
        let gx = suppression_backward(&s, &cache, &r, &mut g);
        let loss = |m: &SuppressionStage, x: &Tensor| (&suppression_conv(x, m).unwrap() * &r).sum();
        let p = check_parameters(&s, &g, 200, 1e-5, |m| loss(m, &x));
        assert!(p.max_rel_error < 1e-4, "{p:?}");
        let i = check_input(&x, &gx, 200, 1e-5, |x| loss(&s, x));
        assert!(i.max_rel_error < 1e-4, "{i:?}");
    }

    #[test]
    fn gradients_sigmoid() {
        grad_case(HeadActivation::Sigmoid, false);
    }

    #[test]
    fn gradients_tanh_strided() {
        grad_case(HeadActivation::Tanh, true);
    }

    #[test]
    fn hierarchy_shapes() {
        let mut rng = Seed(1).rng();
        let enc = init_encoder(3, &[4, 6, 8, 10], Some(HeadActivation::Sigmoid), &mut rng);
        let img = crate::synth::synth_face(64, Seed(2));
        let feats = encode_hierarchy(&img, &enc).unwrap();
        let dims: Vec<_> = feats.iter().map(|f| f.dim()).collect();
        assert_eq!(dims, vec![(4, 32, 32), (6, 16, 16), (8, 8, 8), (10, 4, 4)]);
        assert_eq!(feats, encode_hierarchy(&img, &enc).unwrap());
        assert!(encode_hierarchy(&crate::synth::synth_face(8, Seed(2)), &enc).is_err());
    }
}
