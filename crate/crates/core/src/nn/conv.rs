use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::reflect;
use super::params::Parameters;
use super::Tensor;
use crate::error::{Error, Result};

/// Unfolds `x` into a `(C·S·S) × (Ho·Wo)` matrix of reflect-padded windows
/// centered on every `stride`-th pixel. Row index is `(c·S + ky)·S + kx`.
pub fn im2col(x: &Tensor, size: usize, stride: usize) -> (Array2<f64>, usize, usize) {
    let (c, h, w) = x.dim();
    let r = (size / 2) as isize;
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let ytab: Vec<Vec<usize>> = (0..size)
        .map(|ky| (0..ho).map(|oy| reflect((oy * stride) as isize + ky as isize - r, h)).collect())
        .collect();
    let xtab: Vec<Vec<usize>> = (0..size)
        .map(|kx| (0..wo).map(|ox| reflect((ox * stride) as isize + kx as isize - r, w)).collect())
        .collect();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let n = ho * wo;
    let mut cols = Array2::<f64>::zeros((c * size * size, n));
    let cs = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &xs[ci * h * w..(ci + 1) * h * w];
        for ky in 0..size {
            for kx in 0..size {
                let row = ((ci * size + ky) * size + kx) * n;
                let dst = &mut cs[row..row + n];
                for oy in 0..ho {
                    let src = &plane[ytab[ky][oy] * w..(ytab[ky][oy] + 1) * w];
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, v) in d.iter_mut().enumerate() {
                        *v = src[xtab[kx][ox]];
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im(cols: &Array2<f64>, dim: (usize, usize, usize), size: usize, stride: usize) -> Tensor {
    let (c, h, w) = dim;
    let r = (size / 2) as isize;
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let n = ho * wo;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut out = Array3::<f64>::zeros((c, h, w));
    let os = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..size {
            for kx in 0..size {
                let row = ((ci * size + ky) * size + kx) * n;
                for oy in 0..ho {
                    let y = reflect((oy * stride) as isize + ky as isize - r, h);
                    for ox in 0..wo {
                        let x = reflect((ox * stride) as isize + kx as isize - r, w);
                        os[(ci * h + y) * w + x] += cs[row + oy * wo + ox];
                    }
                }
            }
        }
    }
    out
}

/// Convolution weights `C_out × C_in × S × S` plus a per-output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

/// What [`ConvKernel::backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub cols: Array2<f64>,
    pub in_dim: (usize, usize, usize),
    pub stride: usize,
}

impl ConvKernel {
    pub fn zeros(c_out: usize, c_in: usize, size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd, got {size}");
        ConvKernel {
            weight: Array4::zeros((c_out, c_in, size, size)),
            bias: Array1::zeros(c_out),
        }
    }

    /// He-normal initialization scaled by `gain`; bias zero.
    pub fn init<R: Rng>(c_out: usize, c_in: usize, size: usize, gain: f64, rng: &mut R) -> Self {
        let mut k = ConvKernel::zeros(c_out, c_in, size);
        let std = gain / ((c_in * size * size) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        k.weight.mapv_inplace(|_| normal.sample(rng));
        k
    }

    /// Per-channel identity (center tap 1).
    pub fn identity(channels: usize, size: usize) -> Self {
        let mut k = ConvKernel::zeros(channels, channels, size);
        for c in 0..channels {
            k.weight[[c, c, size / 2, size / 2]] = 1.0;
        }
        k
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim().0
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim().1
    }

    pub fn size(&self) -> usize {
        self.weight.dim().2
    }

    fn matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let (co, ci, s, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((co, ci * s * s))
            .expect("standard layout weights")
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.dim().0 != self.c_in() {
            return Err(Error::shape(format!(
                "kernel expects {} input channels, got {}",
                self.c_in(),
                x.dim().0
            )));
        }
        Ok(())
    }

    /// `W · cols + b`, reshaped to `C_out × ho × wo`.
    pub fn apply_cols(&self, cols: &Array2<f64>, ho: usize, wo: usize) -> Tensor {
        let mut y = self.matrix().dot(cols);
        for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row += *b;
        }
        y.into_shape_with_order((self.c_out(), ho, wo))
            .expect("conv output shape")
    }

    pub fn forward(&self, x: &Tensor, stride: usize) -> (Tensor, ConvCache) {
        let (cols, ho, wo) = im2col(x, self.size(), stride);
        let y = self.apply_cols(&cols, ho, wo);
        let cache = ConvCache {
            cols,
            in_dim: x.dim(),
            stride,
        };
        (y, cache)
    }

    pub fn apply(&self, x: &Tensor, stride: usize) -> Tensor {
        let (cols, ho, wo) = im2col(x, self.size(), stride);
        self.apply_cols(&cols, ho, wo)
    }

    /// Accumulates weight/bias gradients into `grad` and returns `∂L/∂cols`.
    pub fn backward_cols(&self, cols: &Array2<f64>, gy: &Tensor, grad: &mut ConvKernel) -> Array2<f64> {
        let (co, ho, wo) = gy.dim();
        let gy = gy.as_standard_layout();
        let gy2 = gy.view().into_shape_with_order((co, ho * wo)).expect("gy shape");
        let gw = gy2.dot(&cols.t());
        let (_, ci, s, _) = self.weight.dim();
        {
            let mut gwm = grad
                .weight
                .view_mut()
                .into_shape_with_order((co, ci * s * s))
                .expect("grad layout");
            gwm += &gw;
        }
        grad.bias += &gy2.sum_axis(Axis(1));
        self.matrix().t().dot(&gy2)
    }

    pub fn backward(&self, cache: &ConvCache, gy: &Tensor, grad: &mut ConvKernel) -> Tensor {
        let gcols = self.backward_cols(&cache.cols, gy, grad);
        col2im(&gcols, cache.in_dim, self.size(), cache.stride)
    }
}

impl ConvKernel {
    /// Input gradient only, leaving parameter gradients untouched.
    pub fn backward_input(&self, cache: &ConvCache, gy: &Tensor) -> Tensor {
        let (co, ho, wo) = gy.dim();
        let gy = gy.as_standard_layout();
        let gy2 = gy.view().into_shape_with_order((co, ho * wo)).expect("gy shape");
        let gcols = self.matrix().t().dot(&gy2);
        col2im(&gcols, cache.in_dim, self.size(), cache.stride)
    }
}

impl Parameters for ConvKernel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.weight"), self.weight.shape(), self.weight.as_slice().expect("layout"));
        f(&format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice().expect("layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.weight.shape().to_vec();
        f(&format!("{prefix}.weight"), &shape, self.weight.as_slice_mut().expect("layout"));
        let shape = self.bias.shape().to_vec();
        f(&format!("{prefix}.bias"), &shape, self.bias.as_slice_mut().expect("layout"));
    }
}

/// A fully connected layer `out × in`, applied per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    pub fn init<R: Rng>(out: usize, inp: usize, gain: f64, rng: &mut R) -> Self {
        let mut d = Dense::zeros(out, inp);
        let normal = Normal::new(0.0, gain / (inp as f64).sqrt()).expect("finite std");
        d.weight.mapv_inplace(|_| normal.sample(rng));
        d
    }

    pub fn identity(n: usize) -> Self {
        Dense {
            weight: Array2::eye(n),
            bias: Array1::zeros(n),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim().1
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim().0
    }

    /// Applies to every column of `x` (`in × N`).
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = self.weight.dot(x);
        for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row += *b;
        }
        y
    }

    /// Given the forward input and `∂L/∂y`, accumulates into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Array2<f64>, gy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &gy.dot(&x.t());
        grad.bias += &gy.sum_axis(Axis(1));
        self.weight.t().dot(gy)
    }
}

impl Parameters for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.weight"), self.weight.shape(), self.weight.as_slice().expect("layout"));
        f(&format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice().expect("layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.weight.shape().to_vec();
        f(&format!("{prefix}.weight"), &shape, self.weight.as_slice_mut().expect("layout"));
        let shape = self.bias.shape().to_vec();
        f(&format!("{prefix}.bias"), &shape, self.bias.as_slice_mut().expect("layout"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;

    fn random(dim: (usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = Seed(seed).rng();
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution used as an oracle for the im2col path.
    fn direct(x: &Tensor, k: &ConvKernel, stride: usize) -> Tensor {
        let (ci, h, w) = x.dim();
        let s = k.size();
        let r = (s / 2) as isize;
        let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
        Array3::from_shape_fn((k.c_out(), ho, wo), |(o, oy, ox)| {
            let mut acc = k.bias[o];
            for c in 0..ci {
                for ky in 0..s {
                    for kx in 0..s {
                        let y = reflect((oy * stride) as isize + ky as isize - r, h);
                        let xx = reflect((ox * stride) as isize + kx as isize - r, w);
                        acc += k.weight[[o, c, ky, kx]] * x[[c, y, xx]];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn im2col_matches_direct_loops() {
        let mut rng = Seed(3).rng();
        for stride in [1, 2] {
            for size in [1, 3, 5] {
                let x = random((2, 7, 6), 11);
                let k = ConvKernel::init(3, 2, size, 1.0, &mut rng);
                let a = k.apply(&x, stride);
                let b = direct(&x, &k, stride);
                assert!(a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let x = random((2, 5, 6), 1);
        for stride in [1, 2] {
            let (cols, _, _) = im2col(&x, 3, stride);
            let mut rng = Seed(9).rng();
            let c = Array2::from_shape_fn(cols.dim(), |_| rng.random_range(-1.0..1.0));
            let lhs: f64 = (&cols * &c).sum();
            let rhs: f64 = (&x * &col2im(&c, x.dim(), 3, stride)).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = random((3, 6, 6), 2);
        let y = ConvKernel::identity(3, 3).apply(&x, 1);
        assert_eq!(x, y);
    }
}
