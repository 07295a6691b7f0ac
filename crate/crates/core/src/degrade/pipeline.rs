//! Declarative degradation specs, their resolution into concrete operators,
//! and the randomized pipelines that define each restoration task.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{add_noise, downsample, gaussian_blur, jpeg_compress, mosaic, motion_blur, NoiseFamily};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::resize_to;
use crate::seed::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    GaussBlur,
    MotionBlur,
    Downsample,
    Mosaic,
    NoiseGauss,
    NoisePoisson,
    NoiseLaplace,
    Jpeg,
}

/// The four operator families superimposed by the full degradation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Blur,
    Downsample,
    Noise,
    Jpeg,
    Mosaic,
}

impl DegradationKind {
    pub fn family(self) -> Family {
        match self {
            DegradationKind::GaussBlur | DegradationKind::MotionBlur => Family::Blur,
            DegradationKind::Downsample => Family::Downsample,
            DegradationKind::Mosaic => Family::Mosaic,
            DegradationKind::NoiseGauss | DegradationKind::NoisePoisson | DegradationKind::NoiseLaplace => {
                Family::Noise
            }
            DegradationKind::Jpeg => Family::Jpeg,
        }
    }

    fn noise(family: NoiseFamily) -> Self {
        match family {
            NoiseFamily::Gauss => DegradationKind::NoiseGauss,
            NoiseFamily::Poisson => DegradationKind::NoisePoisson,
            NoiseFamily::Laplace => DegradationKind::NoiseLaplace,
        }
    }
}

/// Restoration tasks: each defines how a low-quality input is made from a clean image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// 4× bicubic down, bicubic back up.
    Sr4x,
    /// Mosaic hallucination; block defaults to `resolution / 32`.
    Halluc16x,
    Denoise,
    Deblur,
    Jpeg,
    /// All four families (no mosaic) in random order.
    Renovation,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sr4x" | "sr" => Ok(Task::Sr4x),
            "halluc16x" | "hallucination" | "mosaic" => Ok(Task::Halluc16x),
            "denoise" => Ok(Task::Denoise),
            "deblur" => Ok(Task::Deblur),
            "jpeg" => Ok(Task::Jpeg),
            "renovation" | "full" => Ok(Task::Renovation),
            other => Err(Error::arg(format!(
                "unknown task `{other}` (expected sr4x, halluc16x, denoise, deblur, jpeg, renovation)"
            ))),
        }
    }
}

/// Intensity → parameter maps. Intensity 0 is the mildest setting, 1 the harshest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationRanges {
    pub gauss_sigma: [f64; 2],
    pub motion_length: [usize; 2],
    pub downsample_factors: Vec<usize>,
    pub noise_level: [f64; 2],
    pub jpeg_quality: [u8; 2],
    pub mosaic_block: [usize; 2],
}

impl Default for DegradationRanges {
    fn default() -> Self {
        DegradationRanges {
            gauss_sigma: [0.5, 3.0],
            motion_length: [3, 9],
            downsample_factors: vec![2, 4],
            noise_level: [0.02, 0.12],
            jpeg_quality: [10, 60],
            mosaic_block: [2, 16],
        }
    }
}

impl DegradationRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !ordered(self.gauss_sigma[0], self.gauss_sigma[1]) {
            return Err(Error::Config(format!("gauss_sigma {:?} must be positive and ordered", self.gauss_sigma)));
        }
        if self.motion_length[0] == 0 || self.motion_length[0] > self.motion_length[1] {
            return Err(Error::Config(format!("motion_length {:?} must be ordered and ≥ 1", self.motion_length)));
        }
        if self.downsample_factors.is_empty() || self.downsample_factors.iter().any(|&f| f < 2) {
            return Err(Error::Config("downsample_factors must be non-empty and ≥ 2".into()));
        }
        if !ordered(self.noise_level[0], self.noise_level[1]) {
            return Err(Error::Config(format!("noise_level {:?} must be positive and ordered", self.noise_level)));
        }
        let [qlo, qhi] = self.jpeg_quality;
        if qlo == 0 || qhi > 100 || qlo > qhi {
            return Err(Error::Config(format!("jpeg_quality {:?} must lie in 1..=100, ordered", self.jpeg_quality)));
        }
        if self.mosaic_block[0] == 0 || self.mosaic_block[0] > self.mosaic_block[1] {
            return Err(Error::Config(format!("mosaic_block {:?} must be ordered and ≥ 1", self.mosaic_block)));
        }
        Ok(())
    }
}

fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    lo + (hi - lo) * t
}

/// One declarative degradation: kind, intensity in `[0, 1]`, and a seed for
/// whatever randomness the operator needs (noise draws, motion angle).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub intensity: f64,
    pub seed: Seed,
}

/// A fully resolved operator with concrete parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operator {
    GaussBlur { sigma: f64 },
    MotionBlur { length: usize, angle: f64 },
    /// Bicubic down by `factor`; `restore` resamples back to the input size.
    Downsample { factor: usize, restore: bool },
    Mosaic { block: usize },
    Noise { family: NoiseFamily, level: f64, seed: Seed },
    Jpeg { quality: u8 },
}

impl Operator {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match *self {
            Operator::GaussBlur { sigma } => gaussian_blur(img, sigma),
            Operator::MotionBlur { length, angle } => motion_blur(img, length, angle),
            Operator::Downsample { factor, restore } => {
                let small = downsample(img, factor)?;
                if restore {
                    resize_to(&small, img.height(), img.width())
                } else {
                    Ok(small)
                }
            }
            Operator::Mosaic { block } => mosaic(img, block),
            Operator::Noise { family, level, seed } => add_noise(img, family, level, seed),
            Operator::Jpeg { quality } => jpeg_compress(img, quality),
        }
    }
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, intensity: f64, seed: Seed) -> Result<Self> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::arg(format!("intensity must be in [0, 1], got {intensity}")));
        }
        Ok(DegradationSpec { kind, intensity, seed })
    }

    /// Maps intensity to the operator's concrete parameter. Downsampling
    /// resolves to a restoring operator so every stage shares one resolution.
    pub fn resolve(&self, ranges: &DegradationRanges) -> Result<Operator> {
        ranges.validate()?;
        let t = self.intensity;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::arg(format!("intensity must be in [0, 1], got {t}")));
        }
        Ok(match self.kind {
            DegradationKind::GaussBlur => Operator::GaussBlur {
                sigma: lerp(ranges.gauss_sigma[0], ranges.gauss_sigma[1], t),
            },
            DegradationKind::MotionBlur => Operator::MotionBlur {
                length: lerp(ranges.motion_length[0] as f64, ranges.motion_length[1] as f64, t).round() as usize,
                angle: self.seed.derive_str("angle").rng().random_range(0.0..std::f64::consts::PI),
            },
            DegradationKind::Downsample => {
                let n = ranges.downsample_factors.len();
                let idx = ((t * n as f64).floor() as usize).min(n - 1);
                Operator::Downsample {
                    factor: ranges.downsample_factors[idx],
                    restore: true,
                }
            }
            DegradationKind::Mosaic => Operator::Mosaic {
                block: lerp(ranges.mosaic_block[0] as f64, ranges.mosaic_block[1] as f64, t).round() as usize,
            },
            DegradationKind::NoiseGauss | DegradationKind::NoisePoisson | DegradationKind::NoiseLaplace => {
                let family = match self.kind {
                    DegradationKind::NoiseGauss => NoiseFamily::Gauss,
                    DegradationKind::NoisePoisson => NoiseFamily::Poisson,
                    _ => NoiseFamily::Laplace,
                };
                Operator::Noise {
                    family,
                    level: lerp(ranges.noise_level[0], ranges.noise_level[1], t),
                    seed: self.seed,
                }
            }
            DegradationKind::Jpeg => {
                let [qlo, qhi] = ranges.jpeg_quality;
                Operator::Jpeg {
                    quality: lerp(qhi as f64, qlo as f64, t).round() as u8,
                }
            }
        })
    }
}

/// A spec together with the operator it resolved to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(flatten)]
    pub spec: DegradationSpec,
    pub operator: Operator,
}

impl Stage {
    pub fn resolve(spec: DegradationSpec, ranges: &DegradationRanges) -> Result<Self> {
        Ok(Stage {
            operator: spec.resolve(ranges)?,
            spec,
        })
    }
}

/// An ordered list of stages; replaying it reproduces the degraded image exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationPipeline {
    pub stages: Vec<Stage>,
    pub order_seed: Seed,
}

impl DegradationPipeline {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        self.stages
            .iter()
            .try_fold(img.clone(), |acc, stage| stage.operator.apply(&acc))
    }

    pub fn families(&self) -> Vec<Family> {
        self.stages.iter().map(|s| s.spec.kind.family()).collect()
    }

    pub fn contains(&self, kind: DegradationKind) -> bool {
        self.stages.iter().any(|s| s.spec.kind == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pipeline serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Dataset(format!("bad pipeline record: {e}")))
    }
}

/// Samples the randomized full-degradation pipeline for `seed`: one blur
/// (Gaussian or motion), one restoring downsample, one noise (Gauss, Poisson
/// or Laplace) and one JPEG pass, shuffled, each at a uniform intensity.
pub fn sample_full_pipeline(seed: Seed, ranges: &DegradationRanges) -> Result<DegradationPipeline> {
    let mut rng = seed.rng();
    let blur = if rng.random_bool(0.5) {
        DegradationKind::GaussBlur
    } else {
        DegradationKind::MotionBlur
    };
    let noise = DegradationKind::noise(NoiseFamily::ALL[rng.random_range(0..3)]);
    let mut kinds = [blur, DegradationKind::Downsample, noise, DegradationKind::Jpeg];
    kinds.shuffle(&mut rng);
    let stages = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let spec = DegradationSpec::new(kind, rng.random::<f64>(), seed.derive(i as u64))?;
            Stage::resolve(spec, ranges)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DegradationPipeline { stages, order_seed: seed })
}

/// Applies the randomized full degradation; returns the image and the exact pipeline used.
pub fn compose_full_degradation(
    img: &Image,
    seed: Seed,
    ranges: &DegradationRanges,
) -> Result<(Image, DegradationPipeline)> {
    let pipeline = sample_full_pipeline(seed, ranges)?;
    Ok((pipeline.apply(img)?, pipeline))
}

/// Samples the degradation pipeline that defines `task` for one image.
pub fn task_pipeline(
    task: Task,
    seed: Seed,
    ranges: &DegradationRanges,
    mosaic_block: usize,
) -> Result<DegradationPipeline> {
    let mut rng = seed.rng();
    let single = |kind: DegradationKind, intensity: f64| -> Result<DegradationPipeline> {
        let spec = DegradationSpec::new(kind, intensity, seed.derive(0))?;
        Ok(DegradationPipeline {
            stages: vec![Stage::resolve(spec, ranges)?],
            order_seed: seed,
        })
    };
    match task {
        Task::Renovation => sample_full_pipeline(seed, ranges),
        Task::Sr4x => {
            let spec = DegradationSpec::new(DegradationKind::Downsample, 1.0, seed.derive(0))?;
            Ok(DegradationPipeline {
                stages: vec![Stage {
                    spec,
                    operator: Operator::Downsample { factor: 4, restore: true },
                }],
                order_seed: seed,
            })
        }
        Task::Halluc16x => {
            let spec = DegradationSpec::new(DegradationKind::Mosaic, 1.0, seed.derive(0))?;
            Ok(DegradationPipeline {
                stages: vec![Stage {
                    spec,
                    operator: Operator::Mosaic { block: mosaic_block },
                }],
                order_seed: seed,
            })
        }
        Task::Denoise => {
            let fam = NoiseFamily::ALL[rng.random_range(0..3)];
            single(DegradationKind::noise(fam), rng.random::<f64>())
        }
        Task::Deblur => {
            let kind = if rng.random_bool(0.5) {
                DegradationKind::MotionBlur
            } else {
                DegradationKind::GaussBlur
            };
            single(kind, rng.random::<f64>())
        }
        Task::Jpeg => single(DegradationKind::Jpeg, rng.random::<f64>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_face;
    use std::collections::HashMap;

    #[test]
    fn full_pipeline_is_deterministic_and_mosaic_free() {
        let img = synth_face(64, Seed(1));
        let ranges = DegradationRanges::default();
        for s in 0..20 {
            let (a, pa) = compose_full_degradation(&img, Seed(s), &ranges).unwrap();
            let (b, pb) = compose_full_degradation(&img, Seed(s), &ranges).unwrap();
            assert_eq!(a, b);
            assert_eq!(pa, pb);
            assert!(!pa.contains(DegradationKind::Mosaic));
            let mut fams = pa.families();
            fams.sort();
            assert_eq!(fams, vec![Family::Blur, Family::Downsample, Family::Noise, Family::Jpeg]);
        }
    }

    #[test]
    fn replay_from_json_is_exact() {
        let img = synth_face(64, Seed(2));
        let ranges = DegradationRanges::default();
        for s in 100..110 {
            let (out, p) = compose_full_degradation(&img, Seed(s), &ranges).unwrap();
            let back = DegradationPipeline::from_json(&p.to_json()).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.apply(&img).unwrap(), out);
        }
    }

    #[test]
    fn ordering_frequencies_are_uniform() {
        let ranges = DegradationRanges::default();
        let n = 10_000;
        let mut counts: HashMap<Vec<Family>, usize> = HashMap::new();
        for s in 0..n {
            let p = sample_full_pipeline(Seed(s), &ranges).unwrap();
            *counts.entry(p.families()).or_default() += 1;
        }
        assert_eq!(counts.len(), 24);
        for (order, c) in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 24.0).abs() <= 0.01, "{order:?}: {f}");
        }
    }

    #[test]
    fn intensity_maps_into_ranges() {
        let r = DegradationRanges::default();
        let op = |k, t| DegradationSpec::new(k, t, Seed(0)).unwrap().resolve(&r).unwrap();
        assert_eq!(op(DegradationKind::GaussBlur, 0.0), Operator::GaussBlur { sigma: 0.5 });
        assert_eq!(op(DegradationKind::GaussBlur, 1.0), Operator::GaussBlur { sigma: 3.0 });
        assert_eq!(op(DegradationKind::Jpeg, 0.0), Operator::Jpeg { quality: 60 });
        assert_eq!(op(DegradationKind::Jpeg, 1.0), Operator::Jpeg { quality: 10 });
        assert_eq!(op(DegradationKind::Downsample, 0.2), Operator::Downsample { factor: 2, restore: true });
        assert_eq!(op(DegradationKind::Downsample, 0.9), Operator::Downsample { factor: 4, restore: true });
        match op(DegradationKind::MotionBlur, 0.5) {
            Operator::MotionBlur { length, angle } => {
                assert_eq!(length, 6);
                assert!((0.0..std::f64::consts::PI).contains(&angle));
            }
            other => panic!("{other:?}"),
        }
        assert!(DegradationSpec::new(DegradationKind::Jpeg, 1.5, Seed(0)).is_err());
    }

    #[test]
    fn constant_images_stay_constant_without_noise() {
        let img = Image::constant(64, 64, crate::image::ColorSpace::Rgb, 0.45);
        let r = DegradationRanges::default();
        for kind in [
            DegradationKind::GaussBlur,
            DegradationKind::MotionBlur,
            DegradationKind::Downsample,
            DegradationKind::Mosaic,
            DegradationKind::Jpeg,
        ] {
            for t in [0.0, 0.5, 1.0] {
                let out = Stage::resolve(DegradationSpec::new(kind, t, Seed(4)).unwrap(), &r)
                    .unwrap()
                    .operator
                    .apply(&img)
                    .unwrap();
                let dev = out.data().iter().map(|v| (v - 0.45).abs()).fold(0.0, f64::max);
                let spread = out.data().iter().map(|v| (v - out.data()[[0, 0, 0]]).abs()).fold(0.0, f64::max);
                assert!(spread <= 1.0 / 255.0 + 1e-9, "{kind:?} t={t}: spread {spread}");
                if kind != DegradationKind::Jpeg {
                    assert!(dev <= 1.0 / 255.0 + 1e-9, "{kind:?} t={t}: {dev}");
                }
            }
        }
    }

    #[test]
    fn task_pipelines_have_expected_kinds() {
        let r = DegradationRanges::default();
        let p = task_pipeline(Task::Sr4x, Seed(1), &r, 2).unwrap();
        assert_eq!(p.stages[0].operator, Operator::Downsample { factor: 4, restore: true });
        let p = task_pipeline(Task::Halluc16x, Seed(1), &r, 8).unwrap();
        assert_eq!(p.stages[0].operator, Operator::Mosaic { block: 8 });
        for s in 0..50 {
            let p = task_pipeline(Task::Deblur, Seed(s), &r, 2).unwrap();
            assert_eq!(p.families(), vec![Family::Blur]);
            let p = task_pipeline(Task::Renovation, Seed(s), &r, 2).unwrap();
            assert!(!p.contains(DegradationKind::Mosaic));
        }
        assert_eq!("Renovation".parse::<Task>().unwrap(), Task::Renovation);
        assert!("colorize".parse::<Task>().is_err());
    }
}
