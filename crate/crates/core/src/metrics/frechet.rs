//! Fréchet distance between Gaussian fits of perceptual feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::PerceptualExtractor;

/// Mean and (unbiased) covariance of a feature set.
#[derive(Debug, Clone)]
pub struct FeatureGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureGaussian {
    /// A single sample yields a zero covariance.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let first = features.first().ok_or_else(|| Error::arg("cannot fit a Gaussian to an empty feature set"))?;
        let d = first.len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::arg("feature vectors have inconsistent lengths"));
        }
        let n = features.len();
        let mut mean = DVector::zeros(d);
        for f in features {
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        if n > 1 {
            for f in features {
                let c = DVector::from_column_slice(f) - &mean;
                cov += &c * c.transpose();
            }
            cov /= (n - 1) as f64;
        }
        Ok(Self { mean, cov })
    }
}

/// PSD square root through an eigendecomposition, clamping negative eigenvalues.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// ‖μa−μb‖² + tr(Σa) + tr(Σb) − 2·tr((Σa^½ Σb Σa^½)^½), clamped at zero.
pub fn frechet_distance(a: &FeatureGaussian, b: &FeatureGaussian) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::arg("feature dimensions differ"));
    }
    let ra = psd_sqrt(&a.cov);
    let inner = &ra * &b.cov * &ra;
    let cross = psd_sqrt(&inner).trace();
    let d = (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Fréchet feature distance between two image sets in the extractor's
/// pooled deepest-tap space.
pub fn frechet_feature_distance(set_a: &[Image], set_b: &[Image], p: &PerceptualExtractor) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::arg("Fréchet feature distance needs two non-empty image sets"));
    }
    let feats = |set: &[Image]| -> Result<Vec<Vec<f64>>> { set.par_iter().map(|img| p.pooled_features(img)).collect() };
    let fa = FeatureGaussian::fit(&feats(set_a)?)?;
    let fb = FeatureGaussian::fit(&feats(set_b)?)?;
    frechet_distance(&fa, &fb)
}
