use ndarray::{Array1, Array3, Axis, Zip};

use super::Tensor;

/// Leaky rectifier slope used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Variance floor for instance normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Whole-sample reflection `… c b | a b c … | b a …` for any offset.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// `pre` is the activation's input.
pub fn leaky_relu_backward(pre: &Tensor, gy: &Tensor) -> Tensor {
    let mut g = gy.clone();
    Zip::from(&mut g).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
    g
}

#[derive(Debug, Clone)]
pub struct InstanceNormCache {
    pub normalized: Tensor,
    pub inv_std: Array1<f64>,
}

/// Per-channel zero-mean, unit-variance normalization over spatial dims.
pub fn instance_norm(x: &Tensor) -> InstanceNormCache {
    let (c, _, _) = x.dim();
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(c);
    for (ch, mut plane) in normalized.axis_iter_mut(Axis(0)).enumerate() {
        let n = plane.len() as f64;
        let mean = plane.sum() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        plane.mapv_inplace(|v| (v - mean) * is);
        inv_std[ch] = is;
    }
    InstanceNormCache { normalized, inv_std }
}

pub fn instance_norm_backward(cache: &InstanceNormCache, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for ((mut g, xh), is) in gx
        .axis_iter_mut(Axis(0))
        .zip(cache.normalized.axis_iter(Axis(0)))
        .zip(cache.inv_std.iter())
    {
        let n = g.len() as f64;
        let mean_g = g.sum() / n;
        let mean_gx = (&g * &xh).sum() / n;
        Zip::from(&mut g)
            .and(&xh)
            .for_each(|g, &xh| *g = is * (*g - mean_g - xh * mean_gx));
    }
    gx
}

/// Nearest-neighbor resize; source index is `floor(o · in / out)`.
pub fn resize_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    Array3::from_shape_fn((c, out_h, out_w), |(ch, y, xx)| x[[ch, y * h / out_h, xx * w / out_w]])
}

pub fn resize_nearest_backward(gy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (c, oh, ow) = gy.dim();
    if (oh, ow) == (in_h, in_w) {
        return gy.clone();
    }
    let mut gx = Array3::zeros((c, in_h, in_w));
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                gx[[ch, y * in_h / oh, x * in_w / ow]] += gy[[ch, y, x]];
            }
        }
    }
    gx
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (_, h, w) = x.dim();
    resize_nearest(x, 2 * h, 2 * w)
}

pub fn upsample2_backward(gy: &Tensor) -> Tensor {
    let (_, h, w) = gy.dim();
    resize_nearest_backward(gy, h / 2, w / 2)
}

/// 2×2 average pooling; an odd trailing row/column is dropped.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ch, y, xx)| {
        0.25 * (x[[ch, 2 * y, 2 * xx]]
            + x[[ch, 2 * y + 1, 2 * xx]]
            + x[[ch, 2 * y, 2 * xx + 1]]
            + x[[ch, 2 * y + 1, 2 * xx + 1]])
    })
}

pub fn avg_pool2_backward(gy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (c, h, w) = gy.dim();
    let mut gx = Array3::zeros((c, in_h, in_w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let g = 0.25 * gy[[ch, y, x]];
                gx[[ch, 2 * y, 2 * x]] += g;
                gx[[ch, 2 * y + 1, 2 * x]] += g;
                gx[[ch, 2 * y, 2 * x + 1]] += g;
                gx[[ch, 2 * y + 1, 2 * x + 1]] += g;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-4, 1), 0);
    }

    #[test]
    fn instance_norm_moments() {
        let x = Array3::from_shape_fn((2, 4, 5), |(c, y, x)| (c * 7 + y * 3 + x * x) as f64);
        let n = instance_norm(&x).normalized;
        for plane in n.axis_iter(Axis(0)) {
            let m = plane.mean().unwrap();
            let v = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / plane.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn nearest_round_trip_shapes() {
        let x = Array3::from_shape_fn((1, 2, 3), |(_, y, x)| (y * 3 + x) as f64);
        let up = upsample2(&x);
        assert_eq!(up.dim(), (1, 4, 6));
        assert_eq!(up[[0, 3, 5]], 5.0);
        let g = upsample2_backward(&Array3::ones((1, 4, 6)));
        assert!(g.iter().all(|&v| v == 4.0));
    }
}
