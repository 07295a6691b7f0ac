//! Bicubic resampling (cubic convolution, a = −0.5) with antialiasing on
//! downscale, matching the common MATLAB `imresize` convention.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::image::Image;

const A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Half-sample symmetric boundary: `… b a | a b c … | c b …`.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Per-output-index taps `(source index, weight)` along one axis.
fn contributions(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let (support, kscale) = if scale < 1.0 { (2.0 / scale, scale) } else { (2.0, 1.0) };
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let left = (center - support).floor() as isize;
            let right = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (left..=right)
                .filter_map(|i| {
                    let w = kscale * cubic(kscale * (center - i as f64));
                    (w != 0.0).then(|| (mirror(i, in_len), w))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resizes one plane to `out_h × out_w`, without clamping.
pub fn resize_plane(plane: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    if (h, w) == (out_h, out_w) {
        return plane.to_owned();
    }
    let cols = contributions(w, out_w);
    let mut tmp = Array2::<f64>::zeros((h, out_w));
    for y in 0..h {
        for (x, taps) in cols.iter().enumerate() {
            tmp[[y, x]] = taps.iter().map(|&(i, wt)| plane[[y, i]] * wt).sum::<f64>();
        }
    }
    let rows = contributions(h, out_h);
    let mut out = Array2::zeros((out_h, out_w));
    for (y, taps) in rows.iter().enumerate() {
        for x in 0..out_w {
            out[[y, x]] = taps.iter().map(|&(i, wt)| tmp[[i, x]] * wt).sum();
        }
    }
    out
}

/// Resizes to explicit output dimensions, clamping into `[0, 1]`.
pub fn resize_to(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg(format!("output dimensions must be ≥ 1, got {out_h}x{out_w}")));
    }
    if (img.height(), img.width()) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let c = img.channels();
    let mut data = Array3::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = resize_plane(img.data().index_axis(Axis(0), ch), out_h, out_w);
        data.index_axis_mut(Axis(0), ch).assign(&plane);
    }
    Ok(Image::from_clamped(data))
}

/// Bicubic resampling by `scale`; output dims are `floor(H·scale) × floor(W·scale)`.
pub fn resize_bicubic(img: &Image, scale: f64) -> Result<Image> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::arg(format!("scale must be positive, got {scale}")));
    }
    let dim = |n: usize| ((n as f64) * scale + 1e-9).floor() as usize;
    resize_to(img, dim(img.height()), dim(img.width()))
}
