//! The individual degradation operators. Each maps a `[0, 1]` image to a
//! `[0, 1]` image.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, Image};
use crate::nn::reflect;
use crate::resample::resize_to;
use crate::seed::Seed;

/// Kernel radius is `ceil(GAUSS_TRUNCATE · σ)`.
pub const GAUSS_TRUNCATE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gauss,
    Poisson,
    Laplace,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [NoiseFamily::Gauss, NoiseFamily::Poisson, NoiseFamily::Laplace];
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gauss" | "gaussian" => Ok(NoiseFamily::Gauss),
            "poisson" => Ok(NoiseFamily::Poisson),
            "laplace" | "laplacian" => Ok(NoiseFamily::Laplace),
            other => Err(Error::arg(format!("unknown noise family `{other}`"))),
        }
    }
}

/// Normalized 1-D Gaussian taps, radius `ceil(4σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (GAUSS_TRUNCATE * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn convolve_rows(plane: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let r = (taps.len() / 2) as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * plane[[y, reflect(x as isize + k as isize - r, w)]])
            .sum()
    })
}

fn convolve_cols(plane: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let r = (taps.len() / 2) as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * plane[[reflect(y as isize + k as isize - r, h), x]])
            .sum()
    })
}

fn map_planes(img: &Image, mut f: impl FnMut(Array2<f64>) -> Array2<f64>) -> Image {
    let mut out = img.data().clone();
    for mut plane in out.axis_iter_mut(Axis(0)) {
        let res = f(plane.to_owned());
        plane.assign(&res);
    }
    Image::from_clamped(out)
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::arg(format!("blur sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_kernel(sigma);
    Ok(map_planes(img, |p| convolve_cols(&convolve_rows(&p, &taps), &taps)))
}

/// Normalized line kernel of `length` samples at `angle` radians
/// (counter-clockwise from the +x axis), splatted bilinearly.
pub fn motion_kernel(length: usize, angle: f64) -> Array2<f64> {
    let half = (length as f64 - 1.0) / 2.0;
    let radius = half.ceil() as usize + 1;
    let size = 2 * radius + 1;
    let c = radius as f64;
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut k = Array2::<f64>::zeros((size, size));
    for s in 0..length {
        let t = s as f64 - half;
        let px = c + t * dx;
        let py = c - t * dy;
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        for (oy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                let wgt = wx * wy;
                if wgt <= 0.0 {
                    continue;
                }
                let (yy, xx) = (y0 as usize + oy, x0 as usize + ox);
                if yy < size && xx < size {
                    k[[yy, xx]] += wgt;
                }
            }
        }
    }
    let total = k.sum();
    k / total
}

/// Convolution with a normalized line kernel.
pub fn motion_blur(img: &Image, length: usize, angle: f64) -> Result<Image> {
    let bound = img.height().min(img.width()) / 2;
    if length == 0 || length > bound.max(1) {
        return Err(Error::arg(format!(
            "motion blur length must be in 1..={}, got {length}",
            bound.max(1)
        )));
    }
    if !angle.is_finite() {
        return Err(Error::arg("motion blur angle must be finite"));
    }
    if length == 1 {
        return Ok(img.clone());
    }
    let k = motion_kernel(length, angle);
    let r = (k.dim().0 / 2) as isize;
    Ok(map_planes(img, |p| {
        let (h, w) = p.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut acc = 0.0;
            for ((ky, kx), &wgt) in k.indexed_iter() {
                if wgt != 0.0 {
                    let sy = reflect(y as isize + ky as isize - r, h);
                    let sx = reflect(x as isize + kx as isize - r, w);
                    acc += wgt * p[[sy, sx]];
                }
            }
            acc
        })
    }))
}

/// Replaces each `block×block` tile (ragged at the far edges) by its mean.
pub fn mosaic(img: &Image, block: usize) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if block == 0 || block > h.min(w) {
        return Err(Error::arg(format!("mosaic block must be in 1..={}, got {block}", h.min(w))));
    }
    Ok(map_planes(img, |mut p| {
        for ty in (0..h).step_by(block) {
            for tx in (0..w).step_by(block) {
                let mut tile = p.slice_mut(ndarray::s![ty..(ty + block).min(h), tx..(tx + block).min(w)]);
                let m = tile.mean().unwrap_or(0.0);
                tile.fill(m);
            }
        }
        p
    }))
}

/// Bicubic decimation to `floor(H/factor) × floor(W/factor)`.
pub fn downsample(img: &Image, factor: usize) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if factor < 2 || factor > h.min(w) {
        return Err(Error::arg(format!("downsample factor must be in 2..={}, got {factor}", h.min(w))));
    }
    resize_to(img, h / factor, w / factor)
}

/// Additive (Gauss, Laplace) or shot (Poisson) noise, clamped into `[0, 1]`.
///
/// Gauss adds `N(0, level²)`; Laplace adds `Laplace(0, level/√2)`, which has
/// the same variance; Poisson samples `Poisson(v/level)·level`, which is
/// unbiased.
pub fn add_noise(img: &Image, family: NoiseFamily, level: f64, seed: Seed) -> Result<Image> {
    if !(level.is_finite() && level > 0.0) {
        return Err(Error::arg(format!("noise level must be positive, got {level}")));
    }
    let mut rng = seed.rng();
    let mut data: Array3<f64> = img.data().clone();
    match family {
        NoiseFamily::Gauss => {
            let n = Normal::new(0.0, level).expect("valid std");
            data.iter_mut().for_each(|v| *v += n.sample(&mut rng));
        }
        NoiseFamily::Laplace => {
            let b = level / std::f64::consts::SQRT_2;
            data.iter_mut().for_each(|v| {
                let u: f64 = rng.random::<f64>() - 0.5;
                *v += -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
            });
        }
        NoiseFamily::Poisson => {
            data.iter_mut().for_each(|v| {
                let lambda = *v / level;
                *v = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng) * level
                } else {
                    0.0
                };
            });
        }
    }
    Ok(Image::from_clamped(data))
}

/// Baseline JPEG encode at `quality` and decode back.
pub fn jpeg_compress(img: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::arg(format!("jpeg quality must be in 1..=100, got {quality}")));
    }
    let color = match img.color() {
        ColorSpace::Rgb => image::ExtendedColorType::Rgb8,
        ColorSpace::Gray => image::ExtendedColorType::L8,
    };
    let mut buf = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&img.to_bytes(), img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match img.color() {
        ColorSpace::Rgb => Image::from_bytes(decoded.to_rgb8().as_raw(), h, w, ColorSpace::Rgb),
        ColorSpace::Gray => Image::from_bytes(decoded.to_luma8().as_raw(), h, w, ColorSpace::Gray),
    }
}
