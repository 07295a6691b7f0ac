//! Least-squares adversarial losses, feature matching, perceptual loss and
//! the combined generator objective.
//!
//! Every loss comes with a `_grad` form returning the gradient w.r.t. the
//! tensors the generator (or discriminator) produced.

mod perceptual;

pub use perceptual::{
    perceptual_loss, perceptual_loss_grad, PerceptualCache, PerceptualConfig, PerceptualExtractor, WeightsSource,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_fm: 10.0,
            lambda_perc: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_fm", self.lambda_fm), ("lambda_perc", self.lambda_perc)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn mean_sq_to(t: &Tensor, target: f64) -> f64 {
    t.iter().map(|v| (v - target) * (v - target)).sum::<f64>() / t.len() as f64
}

fn mean_sq_grad(t: &Tensor, target: f64, scale: f64) -> Tensor {
    let n = t.len() as f64;
    t.mapv(|v| scale * 2.0 * (v - target) / n)
}

/// Mean over scales of `mean((r − 1)²)` plus mean over scales of `mean(f²)`.
pub fn lsgan_d_loss(logits_real: &[Tensor], logits_fake: &[Tensor]) -> Result<f64> {
    Ok(lsgan_d_loss_grad(logits_real, logits_fake)?.0)
}

pub fn lsgan_d_loss_grad(logits_real: &[Tensor], logits_fake: &[Tensor]) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    if logits_real.is_empty() || logits_fake.is_empty() {
        return Err(Error::arg("discriminator loss needs at least one logit map per side"));
    }
    let (sr, sf) = (1.0 / logits_real.len() as f64, 1.0 / logits_fake.len() as f64);
    let real: f64 = logits_real.iter().map(|t| mean_sq_to(t, 1.0)).sum::<f64>() * sr;
    let fake: f64 = logits_fake.iter().map(|t| mean_sq_to(t, 0.0)).sum::<f64>() * sf;
    let gr = logits_real.iter().map(|t| mean_sq_grad(t, 1.0, sr)).collect();
    let gf = logits_fake.iter().map(|t| mean_sq_grad(t, 0.0, sf)).collect();
    Ok((real + fake, gr, gf))
}

/// Mean over scales of `mean((f − 1)²)`.
pub fn lsgan_g_loss(logits_fake: &[Tensor]) -> Result<f64> {
    Ok(lsgan_g_loss_grad(logits_fake)?.0)
}

pub fn lsgan_g_loss_grad(logits_fake: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    if logits_fake.is_empty() {
        return Err(Error::arg("generator loss needs at least one logit map"));
    }
    let s = 1.0 / logits_fake.len() as f64;
    let loss = logits_fake.iter().map(|t| mean_sq_to(t, 1.0)).sum::<f64>() * s;
    Ok((loss, logits_fake.iter().map(|t| mean_sq_grad(t, 1.0, s)).collect()))
}

/// `Σ_scales Σ_layers ‖real − fake‖² / (H·W·C)`.
pub fn feature_matching_loss(feats_real: &[Vec<Tensor>], feats_fake: &[Vec<Tensor>]) -> Result<f64> {
    Ok(feature_matching_loss_grad(feats_real, feats_fake)?.0)
}

/// Loss and gradient w.r.t. the fake features; real features are constants.
pub fn feature_matching_loss_grad(
    feats_real: &[Vec<Tensor>],
    feats_fake: &[Vec<Tensor>],
) -> Result<(f64, Vec<Vec<Tensor>>)> {
    if feats_real.len() != feats_fake.len() {
        return Err(Error::arg("feature matching: scale counts differ"));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(feats_fake.len());
    for (r, f) in feats_real.iter().zip(feats_fake) {
        if r.len() != f.len() {
            return Err(Error::arg("feature matching: layer counts differ"));
        }
        let mut g = Vec::with_capacity(f.len());
        for (a, b) in r.iter().zip(f) {
            if a.dim() != b.dim() {
                return Err(Error::arg(format!("feature matching: dims {:?} vs {:?}", a.dim(), b.dim())));
            }
            let n = a.len() as f64;
            let diff = b - a;
            loss += diff.iter().map(|v| v * v).sum::<f64>() / n;
            g.push(diff * (2.0 / n));
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Mean absolute difference in `[0, 1]` pixel space and its gradient w.r.t. `gen`.
pub fn l1_loss_grad(gt: &Tensor, gen: &Tensor) -> Result<(f64, Tensor)> {
    if gt.dim() != gen.dim() {
        return Err(Error::arg("L1 loss dims differ"));
    }
    let n = gt.len() as f64;
    let diff = gen - gt;
    let loss = diff.iter().map(|v| v.abs()).sum::<f64>() / n;
    Ok((loss, diff.mapv(|d| if d == 0.0 { 0.0 } else { d.signum() / n })))
}

/// Component losses of one generator evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub gan: f64,
    pub fm: f64,
    pub perc: f64,
    pub l1: f64,
}

/// `gan + λ_fm·fm + λ_perc·perc + l1_weight·l1`.
pub fn total_g_loss(parts: &LossParts, w: &LossWeights, l1_weight: f64) -> f64 {
    parts.gan + w.lambda_fm * parts.fm + w.lambda_perc * parts.perc + l1_weight * parts.l1
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn full(v: f64, dim: (usize, usize, usize)) -> Tensor {
        Array3::from_elem(dim, v)
    }

    #[test]
    fn lsgan_closed_forms() {
        let d = |r: f64, f: f64| lsgan_d_loss(&[full(r, (1, 4, 4)), full(r, (1, 2, 2))], &[full(f, (1, 4, 4)), full(f, (1, 2, 2))]).unwrap();
        assert_eq!(d(1.0, 0.0), 0.0);
        assert!((d(0.5, 0.5) - 0.5).abs() < 1e-15);
        assert!((d(0.0, 1.0) - 2.0).abs() < 1e-15);
        let g = |f: f64| lsgan_g_loss(&[full(f, (1, 3, 3))]).unwrap();
        assert_eq!(g(1.0), 0.0);
        assert_eq!(g(0.0), 1.0);
        assert_eq!(g(-1.0), 4.0);
        assert!(lsgan_d_loss(&[], &[full(0.0, (1, 1, 1))]).is_err());
    }

    #[test]
    fn feature_matching_closed_form_and_errors() {
        let r = vec![vec![full(3.0, (1, 1, 1))]];
        let f = vec![vec![full(1.0, (1, 1, 1))]];
        assert_eq!(feature_matching_loss(&r, &f).unwrap(), 4.0);
        assert_eq!(feature_matching_loss(&r, &r).unwrap(), 0.0);
        assert!(feature_matching_loss(&r, &[vec![full(1.0, (1, 2, 1))]]).is_err());
        assert!(feature_matching_loss(&r, &[]).is_err());
    }

    #[test]
    fn total_loss_weights() {
        let p = LossParts { gan: 0.7, fm: 0.2, perc: 0.3, l1: 0.1 };
        let zero = LossWeights { lambda_fm: 0.0, lambda_perc: 0.0 };
        assert_eq!(total_g_loss(&p, &zero, 0.0), 0.7);
        let w = LossWeights::default();
        assert!((total_g_loss(&p, &w, 2.0) - (0.7 + 2.0 + 3.0 + 0.2)).abs() < 1e-12);
        let a = Array3::from_elem((3, 2, 2), 0.4);
        assert_eq!(l1_loss_grad(&a, &a).unwrap().0, 0.0);
        assert!(LossWeights { lambda_fm: -1.0, lambda_perc: 0.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn feature_matching_is_homogeneous(vals in prop::collection::vec(-5.0f64..5.0, 8), c in -3.0f64..3.0) {
            let a = Array3::from_shape_vec((2, 2, 2), vals.clone()).unwrap();
            let b = a.mapv(|v| v * 0.5 + 0.25);
            let base = feature_matching_loss(&[vec![a.clone()]], &[vec![b.clone()]]).unwrap();
            let scaled = feature_matching_loss(&[vec![&a * c]], &[vec![&b * c]]).unwrap();
            prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (1.0 + base * c * c));
        }

        #[test]
        fn losses_nonnegative(vals in prop::collection::vec(-5.0f64..5.0, 4)) {
            let t = Array3::from_shape_vec((1, 2, 2), vals).unwrap();
            prop_assert!(lsgan_d_loss(&[t.clone()], &[t.clone()]).unwrap() >= 0.0);
            prop_assert!(lsgan_g_loss(&[t.clone()]).unwrap() >= 0.0);
        }
    }
}
