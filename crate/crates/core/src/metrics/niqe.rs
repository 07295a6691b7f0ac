//! NIQE: distance between an image's natural-scene-statistics Gaussian and
//! one fitted on pristine images.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::resize_plane;

/// Features per patch per scale.
pub const FEATURES_PER_SCALE: usize = 18;
/// Pyramid scales (full and half resolution).
pub const SCALES: usize = 2;
/// Length of the full feature vector.
pub const FEATURE_DIM: usize = FEATURES_PER_SCALE * SCALES;

const REGULARIZER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NiqeConfig {
    /// Patch side at full resolution; must be even.
    pub patch_size: usize,
    /// Patches with mean local deviation above this fraction of the image's
    /// sharpest patch are kept for fitting.
    pub sharpness_threshold: f64,
    /// MSCN stabilizer in unit intensity space.
    pub stabilizer: f64,
    /// Minimum number of pristine images for [`niqe_fit`].
    pub min_images: usize,
}

impl Default for NiqeConfig {
    fn default() -> Self {
        Self {
            patch_size: 96,
            sharpness_threshold: 0.75,
            stabilizer: 1.0 / 255.0,
            min_images: 100,
        }
    }
}

impl NiqeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || self.patch_size % 2 != 0 {
            return Err(Error::Config(format!("niqe patch_size must be even and >= 8, got {}", self.patch_size)));
        }
        if !(0.0..1.0).contains(&self.sharpness_threshold) {
            return Err(Error::Config("niqe sharpness_threshold must lie in [0, 1)".into()));
        }
        if !(self.stabilizer > 0.0) {
            return Err(Error::Config("niqe stabilizer must be positive".into()));
        }
        Ok(())
    }
}

/// Pristine feature Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    /// Row-major `FEATURE_DIM × FEATURE_DIM`.
    pub covariance: Vec<f64>,
    pub patch_size: usize,
}

impl NiqeModel {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(FEATURE_DIM, FEATURE_DIM, &self.covariance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: NiqeModel = serde_json::from_str(s).map_err(|e| Error::Metric(format!("bad NIQE model: {e}")))?;
        if m.mean.len() != FEATURE_DIM || m.covariance.len() != FEATURE_DIM * FEATURE_DIM {
            return Err(Error::Metric("NIQE model has wrong dimensions".into()));
        }
        Ok(m)
    }
}

const GAM_START: f64 = 0.2;
const GAM_STEP: f64 = 0.001;
const GAM_COUNT: usize = 9801;

struct GammaTables {
    ggd: Vec<f64>,
    aggd: Vec<f64>,
}

fn tables() -> &'static GammaTables {
    static T: OnceLock<GammaTables> = OnceLock::new();
    T.get_or_init(|| {
        let mut ggd = Vec::with_capacity(GAM_COUNT);
        let mut aggd = Vec::with_capacity(GAM_COUNT);
        for i in 0..GAM_COUNT {
            let g = GAM_START + GAM_STEP * i as f64;
            let (g1, g2, g3) = (gamma(1.0 / g), gamma(2.0 / g), gamma(3.0 / g));
            ggd.push(g1 * g3 / (g2 * g2));
            aggd.push(g2 * g2 / (g1 * g3));
        }
        GammaTables { ggd, aggd }
    })
}

fn argmin_by(table: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (f64::INFINITY, 0);
    for (i, &t) in table.iter().enumerate() {
        let d = f(t);
        if d < best.0 {
            best = (d, i);
        }
    }
    GAM_START + GAM_STEP * best.1 as f64
}

/// Generalized Gaussian shape and variance by moment matching.
fn ggd_fit(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let var = v.iter().map(|x| x * x).sum::<f64>() / n;
    let e = v.iter().map(|x| x.abs()).sum::<f64>() / n;
    let rho = var / (e * e);
    (argmin_by(&tables().ggd, |t| (rho - t).abs()), var)
}

/// Asymmetric generalized Gaussian: (shape, left std, right std).
fn aggd_fit(v: &[f64]) -> (f64, f64, f64) {
    let side = |pred: fn(f64) -> bool| {
        let sel: Vec<f64> = v.iter().copied().filter(|&x| pred(x)).collect();
        (sel.iter().map(|x| x * x).sum::<f64>() / sel.len() as f64).sqrt()
    };
    let left = side(|x| x < 0.0);
    let right = side(|x| x > 0.0);
    let n = v.len() as f64;
    let g = left / right;
    let mean_abs = v.iter().map(|x| x.abs()).sum::<f64>() / n;
    let mean_sq = v.iter().map(|x| x * x).sum::<f64>() / n;
    let rhat = mean_abs * mean_abs / mean_sq;
    let rnorm = rhat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    (argmin_by(&tables().aggd, |t| (t - rnorm).powi(2)), left, right)
}

fn window() -> [[f64; 7]; 7] {
    let sigma = 7.0 / 6.0;
    let mut w = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (y, row) in w.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (y as f64 - 3.0, x as f64 - 3.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    w.iter_mut().flatten().for_each(|v| *v /= total);
    w
}

/// Replicate-padded 7×7 Gaussian filtering.
fn filter(p: ArrayView2<f64>, w: &[[f64; 7]; 7]) -> Array2<f64> {
    let (h, wd) = p.dim();
    Array2::from_shape_fn((h, wd), |(y, x)| {
        let mut acc = 0.0;
        for (dy, row) in w.iter().enumerate() {
            let yy = (y as isize + dy as isize - 3).clamp(0, h as isize - 1) as usize;
            for (dx, wv) in row.iter().enumerate() {
                let xx = (x as isize + dx as isize - 3).clamp(0, wd as isize - 1) as usize;
                acc += wv * p[[yy, xx]];
            }
        }
        acc
    })
}

/// Mean-subtracted contrast-normalized coefficients and the local deviation map.
fn mscn(p: ArrayView2<f64>, c: f64) -> (Array2<f64>, Array2<f64>) {
    let w = window();
    let mu = filter(p, &w);
    let sq = p.mapv(|v| v * v);
    let mu_sq = filter(sq.view(), &w);
    // Differences at the level of floating-point cancellation are treated
    // as exact zeros so flat regions have zero deviation.
    let sigma = ndarray::Zip::from(&mu_sq).and(&mu).map_collect(|&m2, &m| {
        let var = m2 - m * m;
        if var.abs() <= 1e-9 * m2.max(1.0) {
            0.0
        } else {
            var.abs().sqrt()
        }
    });
    let structdis = ndarray::Zip::from(&p).and(&mu).and(&sigma).map_collect(|&v, &m, &s| {
        let d = v - m;
        if d.abs() <= 1e-9 * v.abs().max(1.0) {
            0.0
        } else {
            d / (s + c)
        }
    });
    (structdis, sigma)
}

const SHIFTS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (-1, 1)];

fn block_features(block: ArrayView2<f64>, out: &mut Vec<f64>) {
    let (h, w) = block.dim();
    let flat: Vec<f64> = block.iter().copied().collect();
    let (alpha, var) = ggd_fit(&flat);
    out.push(alpha);
    out.push(var);
    for &(dy, dx) in &SHIFTS {
        let mut pair = Vec::with_capacity(h * w);
        for y in 0..h {
            let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
                pair.push(block[[y, x]] * block[[sy, sx]]);
            }
        }
        let (alpha, left, right) = aggd_fit(&pair);
        let g1 = gamma(1.0 / alpha);
        let konst = g1.sqrt() / gamma(3.0 / alpha).sqrt();
        let mean = (right - left) * (gamma(2.0 / alpha) / g1) * konst;
        out.extend_from_slice(&[alpha, mean, left * left, right * right]);
    }
}

/// Per-patch feature vectors and sharpness values of one image.
pub(crate) fn patch_features(img: &Image, cfg: &NiqeConfig) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let ps = cfg.patch_size;
    let luma = img.luma_bytes();
    let (h, w) = luma.dim();
    let (rows, cols) = (h / ps, w / ps);
    if rows == 0 || cols == 0 {
        return Err(Error::Metric(format!("image {h}x{w} smaller than one {ps}x{ps} NIQE patch")));
    }
    let c = cfg.stabilizer * 255.0;
    let full = luma.slice(s![..rows * ps, ..cols * ps]).to_owned();
    let half = resize_plane(full.view(), rows * ps / 2, cols * ps / 2);
    let mut feats = vec![Vec::with_capacity(FEATURE_DIM); rows * cols];
    let mut sharpness = vec![0.0; rows * cols];
    for (scale, plane) in [full, half].iter().enumerate() {
        let b = ps >> scale;
        let (dis, sigma) = mscn(plane.view(), c);
        for r in 0..rows {
            for q in 0..cols {
                let idx = r * cols + q;
                let region = s![r * b..(r + 1) * b, q * b..(q + 1) * b];
                block_features(dis.slice(region), &mut feats[idx]);
                if scale == 0 {
                    sharpness[idx] = sigma.slice(region).mean().unwrap_or(0.0);
                }
            }
        }
    }
    Ok((feats, sharpness))
}

fn mean_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        for r in rows {
            let c = DVector::from_column_slice(r) - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Fit the pristine model on sharp patches of `pristine`.
pub fn niqe_fit(pristine: &[Image], cfg: &NiqeConfig) -> Result<NiqeModel> {
    cfg.validate()?;
    if pristine.len() < cfg.min_images {
        return Err(Error::Metric(format!(
            "NIQE fitting needs at least {} pristine images, got {}",
            cfg.min_images,
            pristine.len()
        )));
    }
    let per_image: Vec<(Vec<Vec<f64>>, Vec<f64>)> =
        pristine.par_iter().map(|img| patch_features(img, cfg)).collect::<Result<_>>()?;
    let mut selected = Vec::new();
    for (feats, sharp) in per_image {
        let max = sharp.iter().copied().fold(0.0, f64::max);
        for (f, s) in feats.into_iter().zip(sharp) {
            if s > cfg.sharpness_threshold * max && finite(&f) {
                selected.push(f);
            }
        }
    }
    if selected.is_empty() {
        return Err(Error::Metric("no sharp pristine patches to fit NIQE".into()));
    }
    let (mean, mut cov) = mean_cov(&selected);
    cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max().max(1.0);
    if min <= 1e-12 * max {
        log::warn!(
            "degenerate NIQE covariance (min eigenvalue {min:.3e}, {} patches); adding {REGULARIZER:e}·I",
            selected.len()
        );
        cov += DMatrix::identity(FEATURE_DIM, FEATURE_DIM) * REGULARIZER;
    }
    Ok(NiqeModel {
        mean: mean.iter().copied().collect(),
        covariance: cov.transpose().iter().copied().collect(),
        patch_size: cfg.patch_size,
    })
}

/// NIQE score of one image (lower is more natural).
pub fn niqe_score(img: &Image, model: &NiqeModel, cfg: &NiqeConfig) -> Result<f64> {
    cfg.validate()?;
    if model.patch_size != cfg.patch_size {
        return Err(Error::Metric(format!(
            "NIQE model fitted with patch {} but scoring with {}",
            model.patch_size, cfg.patch_size
        )));
    }
    let (feats, _) = patch_features(img, cfg)?;
    let valid: Vec<Vec<f64>> = feats.into_iter().filter(|f| finite(f)).collect();
    if valid.is_empty() {
        return Err(Error::Metric("no valid NIQE patches (flat image?)".into()));
    }
    let (mu, cov) = mean_cov(&valid);
    let pooled = (model.covariance_matrix() + cov) * 0.5;
    let inv = pooled
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Metric(format!("NIQE pseudo-inverse failed: {e}")))?;
    let d = DVector::from_column_slice(&model.mean) - mu;
    let q = (d.transpose() * inv * &d)[(0, 0)];
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{add_noise, NoiseFamily};
    use crate::image::ColorSpace;
    use crate::seed::Seed;
    use crate::synth::synth_face;

    fn small_cfg() -> NiqeConfig {
        NiqeConfig {
            patch_size: 32,
            min_images: 4,
            ..NiqeConfig::default()
        }
    }

    #[test]
    fn gaussian_samples_fit_shape_two() {
        use rand_distr::{Distribution, Normal};
        let mut rng = Seed(5).rng();
        let v: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(200_000).collect();
        let (alpha, var) = ggd_fit(&v);
        assert!((alpha - 2.0).abs() < 0.05, "{alpha}");
        assert!((var - 1.0).abs() < 0.02);
        let (a2, l, r) = aggd_fit(&v);
        assert!((a2 - 2.0).abs() < 0.05 && (l - 1.0).abs() < 0.02 && (r - 1.0).abs() < 0.02);
    }

    #[test]
    fn constant_patches_are_invalid_and_unselected() {
        let flat = Image::constant(64, 64, ColorSpace::Rgb, 0.4);
        let (feats, sharp) = patch_features(&flat, &small_cfg()).unwrap();
        assert!(sharp.iter().all(|&s| s == 0.0));
        assert!(feats.iter().all(|f| !finite(f)));
        let faces: Vec<Image> = (0..4).map(|i| synth_face(64, Seed(i))).collect();
        let model = niqe_fit(&faces, &small_cfg()).unwrap();
        assert!(niqe_score(&flat, &model, &small_cfg()).is_err());
        assert!(niqe_fit(&vec![Image::constant(64, 64, ColorSpace::Rgb, 0.4); 4], &small_cfg()).is_err());
    }

    #[test]
    fn fit_is_deterministic_symmetric_psd() {
        let faces: Vec<Image> = (0..6).map(|i| synth_face(64, Seed(10 + i))).collect();
        let a = niqe_fit(&faces, &small_cfg()).unwrap();
        let b = niqe_fit(&faces, &small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = a.covariance_matrix();
        assert!((&c - c.transpose()).amax() == 0.0);
        assert!(SymmetricEigen::new(c).eigenvalues.min() > 0.0);
        let back = NiqeModel::from_json(&a.to_json()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn score_nonnegative_and_noise_raises_it() {
        let faces: Vec<Image> = (0..8).map(|i| synth_face(64, Seed(100 + i))).collect();
        let cfg = small_cfg();
        let model = niqe_fit(&faces, &cfg).unwrap();
        let img = synth_face(64, Seed(500));
        let clean = niqe_score(&img, &model, &cfg).unwrap();
        let noisy = niqe_score(&add_noise(&img, NoiseFamily::Gauss, 0.1, Seed(1)).unwrap(), &model, &cfg).unwrap();
        assert!(clean >= 0.0 && noisy > clean, "{clean} {noisy}");
        assert_eq!(clean, niqe_score(&img, &model, &cfg).unwrap());
    }

    #[test]
    fn too_few_images_or_too_small() {
        let cfg = NiqeConfig::default();
        assert!(niqe_fit(&[synth_face(32, Seed(1))], &cfg).is_err());
        assert!(patch_features(&synth_face(32, Seed(1)), &cfg).is_err());
    }
}
