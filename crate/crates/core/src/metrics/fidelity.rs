//! Full-reference fidelity metrics: PSNR, SSIM and MS-SSIM.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::image::Image;

/// Returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;

/// Standard MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.channels(), a.height(), a.width()) != (b.channels(), b.height(), b.width()) {
        return Err(Error::arg(format!(
            "image dims differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1.0 (255 in byte space).
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut w: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering.
fn filter_valid(p: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (h, wd) = p.dim();
    let k = w.len();
    let tmp = Array2::from_shape_fn((h, wd - k + 1), |(y, x)| (0..k).map(|i| w[i] * p[[y, x + i]]).sum::<f64>());
    Array2::from_shape_fn((h - k + 1, wd - k + 1), |(y, x)| (0..k).map(|i| w[i] * tmp[[y + i, x]]).sum::<f64>())
}

/// Mean SSIM and mean contrast-structure term for two luma planes.
fn ssim_terms(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(f64, f64)> {
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let win = gaussian_window();
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu1 = filter_valid(&a, &win);
    let mu2 = filter_valid(&b, &win);
    let s11 = filter_valid(&(&a * &a), &win);
    let s22 = filter_valid(&(&b * &b), &win);
    let s12 = filter_valid(&(&a * &b), &win);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let n = mu1.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu1.len() {
        let (m1, m2) = (mu1.as_slice().unwrap()[i], mu2.as_slice().unwrap()[i]);
        let v1 = s11.as_slice().unwrap()[i] - m1 * m1;
        let v2 = s22.as_slice().unwrap()[i] - m2 * m2;
        let v12 = s12.as_slice().unwrap()[i] - m1 * m2;
        let c = (2.0 * v12 + c2) / (v1 + v2 + c2);
        let l = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        ssim += l * c;
        cs += c;
    }
    Ok((ssim / n, cs / n))
}

/// Mean structural similarity on BT.601 luma, 11×11 Gaussian window (σ 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let (la, lb) = (a.luma_bytes(), b.luma_bytes());
    Ok(ssim_terms(la.view(), lb.view())?.0)
}

fn pool2(p: &Array2<f64>) -> Array2<f64> {
    let (h, w) = p.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        0.25 * (p[[2 * y, 2 * x]] + p[[2 * y + 1, 2 * x]] + p[[2 * y, 2 * x + 1]] + p[[2 * y + 1, 2 * x + 1]])
    })
}

/// Largest scale count (≤ 5) for which the coarsest level still fits the window.
pub fn ms_ssim_scales_for(height: usize, width: usize) -> usize {
    let mut side = height.min(width);
    let mut k = 0;
    while k < MS_SSIM_WEIGHTS.len() && side >= SSIM_WINDOW {
        k += 1;
        side /= 2;
    }
    k
}

/// Multi-scale SSIM with as many scales as the image supports.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    ms_ssim_with_scales(a, b, ms_ssim_scales_for(a.height(), a.width()))
}

/// Multi-scale SSIM over `scales` levels; the first `scales` standard
/// weights are renormalized to sum to one. Contrast-structure terms at every
/// level but the last, full SSIM at the last.
pub fn ms_ssim_with_scales(a: &Image, b: &Image, scales: usize) -> Result<f64> {
    same_dims(a, b)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::arg(format!("MS-SSIM scale count must be 1..=5, got {scales}")));
    }
    if ms_ssim_scales_for(a.height(), a.width()) < scales {
        return Err(Error::arg(format!(
            "image {}x{} too small for {scales} MS-SSIM scales",
            a.height(),
            a.width()
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let (mut la, mut lb) = (a.luma_bytes(), b.luma_bytes());
    let mut value = 1.0;
    for (i, w) in weights.iter().enumerate() {
        let w = w / total;
        let (s, cs) = ssim_terms(la.view(), lb.view())?;
        let term = if i + 1 == scales { s } else { cs };
        value *= term.max(0.0).powf(w);
        if i + 1 < scales {
            la = pool2(&la);
            lb = pool2(&lb);
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{add_noise, NoiseFamily};
    use crate::image::ColorSpace;
    use crate::seed::Seed;
    use crate::synth::synth_face;

    fn byte_gray(h: usize, w: usize, f: impl Fn(usize, usize) -> u8) -> Image {
        let bytes: Vec<u8> = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Image::from_bytes(&bytes, h, w, ColorSpace::Gray).unwrap()
    }

    #[test]
    fn psnr_identity_and_offset() {
        let a = byte_gray(16, 16, |y, x| ((y * 7 + x * 3) % 200) as u8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
        let b = byte_gray(16, 16, |y, x| ((y * 7 + x * 3) % 200 + 16) as u8);
        let expect = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &byte_gray(8, 8, |_, _| 0)).is_err());
    }

    #[test]
    fn ssim_constant_pair_closed_form() {
        let a = byte_gray(32, 32, |_, _| 100);
        let b = byte_gray(32, 32, |_, _| 140);
        let c1 = (0.01f64 * 255.0).powi(2);
        let expect = (2.0 * 100.0 * 140.0 + c1) / (100.0f64.powi(2) + 140.0f64.powi(2) + c1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        assert!((got - 0.94596).abs() < 1e-4);
    }

    #[test]
    fn ssim_identity_symmetry_and_size() {
        let a = synth_face(48, Seed(1));
        let b = synth_face(48, Seed(2));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let tiny = Image::constant(10, 10, ColorSpace::Rgb, 0.5);
        assert!(ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn ms_ssim_basics() {
        let a = synth_face(64, Seed(3));
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ms_ssim_scales_for(64, 64), 3);
        assert_eq!(ms_ssim_scales_for(176, 200), 5);
        assert_eq!(ms_ssim_scales_for(10, 64), 0);
        let b = add_noise(&a, NoiseFamily::Gauss, 0.05, Seed(1)).unwrap();
        let single = ms_ssim_with_scales(&a, &b, 1).unwrap();
        assert!((single - ssim(&a, &b).unwrap()).abs() <= 1e-9);
        let tiny = Image::constant(10, 10, ColorSpace::Rgb, 0.5);
        assert!(ms_ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn ms_ssim_decreases_with_noise() {
        let img = synth_face(96, Seed(4));
        let scores: Vec<f64> = [0.02, 0.04, 0.06, 0.08]
            .iter()
            .map(|&l| ms_ssim(&img, &add_noise(&img, NoiseFamily::Gauss, l, Seed(9)).unwrap()).unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[1] < w[0]), "{scores:?}");
    }
}
