//! Adversarial training loop: one discriminator update then one generator
//! update per step, periodic validation and checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::dataset::{DatasetRecord, PairedDataset, Split};
use crate::discriminator::{zero_feature_grads, DiscriminatorState};
use crate::error::{Error, Result};
use crate::generator::{GeneratorState, GuidanceSource};
use crate::image::{load_image, Image};
use crate::losses::{
    feature_matching_loss_grad, l1_loss_grad, lsgan_d_loss_grad, lsgan_g_loss_grad, perceptual_loss_grad, total_g_loss,
    LossParts, PerceptualExtractor,
};
use crate::metrics::{niqe_fit, psnr, ssim, NiqeConfig, NiqeModel};
use crate::nn::{Adam, Parameters, ParametersExt, Tensor};
use crate::seed::Seed;

pub const CURVE_FILE: &str = "curve.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Models, optimizers and the number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: GeneratorState,
    pub discriminator: DiscriminatorState,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub step: u64,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = GeneratorState::init(&cfg.generator_config()?, cfg.seed.derive_str("generator"))?;
        let discriminator = DiscriminatorState::init(&cfg.discriminator_config(), cfg.seed.derive_str("discriminator"))?;
        let opt_g = Adam::new(cfg.lr_g, cfg.beta1, cfg.beta2, generator.num_params());
        let opt_d = Adam::new(cfg.lr_d, cfg.beta1, cfg.beta2, discriminator.num_params());
        Ok(TrainState {
            config: cfg.clone(),
            generator,
            discriminator,
            opt_g,
            opt_d,
            step: 0,
        })
    }

    /// Root of the per-step batch draws.
    pub fn batch_seed(&self) -> Seed {
        self.config.seed.derive_str("batches")
    }

    /// TRAIN indices drawn for step `step` (0-based), without replacement.
    pub fn batch_indices(&self, step: u64, n_train: usize) -> Vec<usize> {
        let k = self.config.batch_size.min(n_train);
        let mut rng = self.batch_seed().derive(step).rng();
        let mut idx = rand::seq::index::sample(&mut rng, n_train, k).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// One training pair as tensors in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub lq: Tensor,
    pub hq: Tensor,
    pub guidance: Option<Tensor>,
}

/// Scalar record of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: u64,
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_fm: f64,
    pub g_perc: f64,
    pub g_l1: f64,
    pub g_total: f64,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

/// Mean PSNR/SSIM over the validation images at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub psnr: f64,
    pub ssim: f64,
}

fn grad_norm<P: Parameters>(p: &P) -> f64 {
    let mut s = 0.0;
    p.visit("", &mut |_, _, v| s += v.iter().map(|x| x * x).sum::<f64>());
    s.sqrt()
}

fn sum_in_order<P: Parameters + Clone>(mut parts: Vec<P>) -> P {
    let mut acc = parts.remove(0);
    for p in &parts {
        let mut flat = Vec::new();
        p.visit("", &mut |_, _, v| flat.extend_from_slice(v));
        let mut off = 0;
        acc.visit_mut("", &mut |_, _, v| {
            for (a, b) in v.iter_mut().zip(&flat[off..]) {
                *a += b;
            }
            off += v.len();
        });
    }
    acc
}

/// One D update on the current generator's outputs, then one G update
/// against the updated D. A non-finite loss or gradient aborts the step
/// before the affected model is touched.
pub fn train_step(state: &mut TrainState, batch: &[Sample], perceptual: &PerceptualExtractor) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let (g, d) = (&state.generator, &state.discriminator);

    let fwd = batch
        .par_iter()
        .map(|s| g.forward(&s.lq, s.guidance.as_ref(), None))
        .collect::<Result<Vec<_>>>()?;

    let d_parts = batch
        .par_iter()
        .zip(fwd.par_iter())
        .map(|(s, (fake, _))| -> Result<(f64, DiscriminatorState)> {
            let (ro, rc) = d.forward(&s.hq)?;
            let (fo, fc) = d.forward(fake)?;
            let rl: Vec<Tensor> = ro.iter().map(|o| o.logits().clone()).collect();
            let fl: Vec<Tensor> = fo.iter().map(|o| o.logits().clone()).collect();
            let (loss, gr, gf) = lsgan_d_loss_grad(&rl, &fl)?;
            let mut grad = d.zeros_like();
            for (outs, cache, gl) in [(&ro, &rc, gr), (&fo, &fc, gf)] {
                let mut gfeats = zero_feature_grads(outs);
                for (k, g) in gl.into_iter().enumerate() {
                    *gfeats[k].last_mut().expect("non-empty stack") = g * inv_b;
                }
                d.backward(cache, &gfeats, Some(&mut grad));
            }
            Ok((loss, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let d_loss = d_parts.iter().map(|(l, _)| l).sum::<f64>() * inv_b;
    let grad_d = sum_in_order(d_parts.into_iter().map(|(_, g)| g).collect());
    let grad_norm_d = grad_norm(&grad_d);
    let step = state.step + 1;
    if !(d_loss.is_finite() && grad_norm_d.is_finite()) {
        return Err(Error::NonFinite {
            step,
            diagnostic: format!("discriminator update: d_loss={d_loss} |grad_d|={grad_norm_d}"),
        });
    }
    let lr_scale = state.config.lr_scale(state.step);
    state.opt_d.step_scaled(&mut state.discriminator, &grad_d, lr_scale);
    let (g, d) = (&state.generator, &state.discriminator);
    let cfg = &state.config;

    let weights = cfg.loss_weights();
    let l1_weight = cfg.l1_weight;
    let g_parts = batch
        .par_iter()
        .zip(fwd.par_iter())
        .map(|(s, (fake, gcache))| -> Result<(LossParts, GeneratorState)> {
            let (ro, _) = d.forward(&s.hq)?;
            let (fo, fc) = d.forward(fake)?;
            let fl: Vec<Tensor> = fo.iter().map(|o| o.logits().clone()).collect();
            let (gan, glog) = lsgan_g_loss_grad(&fl)?;
            let rf: Vec<Vec<Tensor>> = ro.into_iter().map(|o| o.features).collect();
            let ff: Vec<Vec<Tensor>> = fo.iter().map(|o| o.features.clone()).collect();
            let (fm, gfm) = feature_matching_loss_grad(&rf, &ff)?;
            let gfeats: Vec<Vec<Tensor>> = gfm
                .into_iter()
                .zip(glog)
                .map(|(layers, gl)| {
                    let n = layers.len();
                    layers
                        .into_iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let t = t * weights.lambda_fm;
                            if i + 1 == n {
                                t + &gl
                            } else {
                                t
                            }
                        })
                        .collect()
                })
                .collect();
            let mut gimg = d.backward(&fc, &gfeats, None);
            let (perc, gperc) = perceptual_loss_grad(&s.hq, fake, perceptual)?;
            gimg.scaled_add(weights.lambda_perc, &gperc);
            let (l1, gl1) = l1_loss_grad(&s.hq, fake)?;
            if l1_weight != 0.0 {
                gimg.scaled_add(l1_weight, &gl1);
            }
            gimg *= inv_b;
            let mut grad = g.zeros_like();
            g.backward(gcache, &gimg, &mut grad);
            Ok((LossParts { gan, fm, perc, l1 }, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = LossParts::default();
    for (p, _) in &g_parts {
        parts.gan += p.gan * inv_b;
        parts.fm += p.fm * inv_b;
        parts.perc += p.perc * inv_b;
        parts.l1 += p.l1 * inv_b;
    }
    let grad_g = sum_in_order(g_parts.into_iter().map(|(_, g)| g).collect());
    let grad_norm_g = grad_norm(&grad_g);

    let losses = StepLosses {
        step,
        d_loss,
        g_gan: parts.gan,
        g_fm: parts.fm,
        g_perc: parts.perc,
        g_l1: parts.l1,
        g_total: total_g_loss(&parts, &weights, l1_weight),
        grad_norm_g,
        grad_norm_d,
    };
    let scalars = [
        losses.d_loss,
        losses.g_gan,
        losses.g_fm,
        losses.g_perc,
        losses.g_l1,
        losses.g_total,
        grad_norm_g,
        grad_norm_d,
    ];
    if scalars.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: losses.step,
            diagnostic: format!(
                "d_loss={} g_gan={} g_fm={} g_perc={} g_l1={} g_total={} |grad_g|={} |grad_d|={}",
                losses.d_loss,
                losses.g_gan,
                losses.g_fm,
                losses.g_perc,
                losses.g_l1,
                losses.g_total,
                grad_norm_g,
                grad_norm_d
            ),
        });
    }
    state.opt_g.step_scaled(&mut state.generator, &grad_g, lr_scale);
    state.step += 1;
    Ok(losses)
}

/// Nearest-neighbour resize of a label map to `size × size`.
fn resize_nearest(t: &Tensor, size: usize) -> Tensor {
    let (c, h, w) = t.dim();
    Array3::from_shape_fn((c, size, size), |(k, y, x)| t[[k, y * h / size, x * w / size]])
}

/// Guidance map for an image named `stem` when the model takes external
/// guidance, in `[-1, 1]` like [`crate::generator::generate`] feeds it.
pub fn load_guidance(cfg: &TrainConfig, g: &GeneratorState, stem: &str) -> Result<Option<Tensor>> {
    let GuidanceSource::External { channels } = g.guidance else {
        return Ok(None);
    };
    let dir = cfg
        .parsing_dir
        .as_ref()
        .ok_or_else(|| Error::Config("external guidance needs `parsing_dir`".into()))?;
    let path = dir.join(format!("{stem}.png"));
    let map = load_image(&path)?;
    if map.channels() != channels {
        return Err(Error::Dataset(format!(
            "{} has {} channels, expected {channels}",
            path.display(),
            map.channels()
        )));
    }
    Ok(Some(resize_nearest(&map.to_signed(), g.resolution())))
}

fn source_stem(r: &DatasetRecord) -> String {
    Path::new(&r.source)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| r.id.clone())
}

/// Loads the records of one split (never called with TEST by the loop).
pub fn load_samples(ds: &PairedDataset, records: &[&DatasetRecord], state: &TrainState) -> Result<Vec<Sample>> {
    records
        .par_iter()
        .map(|r| {
            Ok(Sample {
                id: r.id.clone(),
                lq: ds.load_lq(r)?.to_rgb().into_data(),
                hq: ds.load_hq(r)?.to_rgb().into_data(),
                guidance: load_guidance(&state.config, &state.generator, &source_stem(r))?,
            })
        })
        .collect()
}

/// Mean PSNR/SSIM of the current generator on `samples`.
pub fn validate(state: &TrainState, samples: &[Sample]) -> Result<ValidationRecord> {
    let scores = samples
        .par_iter()
        .map(|s| {
            let (out, _) = state.generator.forward(&s.lq, s.guidance.as_ref(), None)?;
            let out = Image::from_clamped(out);
            let hq = Image::new(s.hq.clone())?;
            Ok((psnr(&out, &hq)?, ssim(&out, &hq)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let n = scores.len().max(1) as f64;
    Ok(ValidationRecord {
        step: state.step,
        psnr: scores.iter().map(|s| s.0).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.1).sum::<f64>() / n,
    })
}

/// Knobs of [`fit`] that are not part of the model config.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Curves and checkpoints are written here when set.
    pub run_dir: Option<PathBuf>,
    /// Continue from this state instead of a fresh initialization.
    pub resume: Option<TrainState>,
    /// Stop once this many steps are complete (for staged runs).
    pub stop_at: Option<u64>,
    /// Log a progress line every this many steps (0 = never).
    pub log_every: u64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: TrainState,
    pub curve: Vec<StepLosses>,
    pub validation: Vec<ValidationRecord>,
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() }))
        .collect()
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append_record<T: Serialize>(path: &Path, r: &T) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(|e| Error::io(path, e))
}

fn checkpoint(state: &TrainState, dir: &Path, keep: bool) -> Result<()> {
    if keep {
        let d = dir.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        save_checkpoint(state, &d.join(format!("step_{:08}.ckpt", state.step)))?;
    }
    save_checkpoint(state, &dir.join(LATEST_CHECKPOINT))
}

/// Trains on the TRAIN split for `cfg.steps` steps, validating on VAL at
/// step 0, every `val_every` steps and at the end.
pub fn fit(cfg: &TrainConfig, dataset: &PairedDataset, opts: FitOptions) -> Result<FitOutcome> {
    let mut state = match opts.resume {
        Some(s) => {
            if s.config != *cfg {
                return Err(Error::Config("resume state was trained with a different config".into()));
            }
            s
        }
        None => TrainState::init(cfg)?,
    };
    let perceptual = PerceptualExtractor::from_config(&cfg.perceptual_config())?;
    let train_recs: Vec<&DatasetRecord> = dataset.split(Split::Train).collect();
    if train_recs.is_empty() {
        return Err(Error::Dataset("dataset has no TRAIN records".into()));
    }
    let val_recs: Vec<&DatasetRecord> = dataset.split(Split::Val).take(cfg.val_images).collect();
    let train = load_samples(dataset, &train_recs, &state)?;
    let val = load_samples(dataset, &val_recs, &state)?;

    let mut curve: Vec<StepLosses> = Vec::new();
    let mut validation: Vec<ValidationRecord> = Vec::new();
    if let Some(dir) = &opts.run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        // drop records past the resume point so the files continue seamlessly
        curve = read_records(&dir.join(CURVE_FILE))?;
        curve.retain(|r: &StepLosses| r.step <= state.step);
        write_records(&dir.join(CURVE_FILE), &curve)?;
        validation = read_records(&dir.join(VALIDATION_FILE))?;
        validation.retain(|r: &ValidationRecord| state.step > 0 && r.step <= state.step);
        write_records(&dir.join(VALIDATION_FILE), &validation)?;
    }
    let record_validation = |state: &TrainState, validation: &mut Vec<ValidationRecord>| -> Result<()> {
        if val.is_empty() {
            return Ok(());
        }
        let v = validate(state, &val)?;
        log::info!("step {}: val psnr {:.3} ssim {:.4}", v.step, v.psnr, v.ssim);
        if let Some(dir) = &opts.run_dir {
            append_record(&dir.join(VALIDATION_FILE), &v)?;
        }
        validation.push(v);
        Ok(())
    };
    if validation.last().is_none_or(|v| v.step != state.step) && (state.step == 0 || state.step % cfg.val_every == 0) {
        record_validation(&state, &mut validation)?;
    }
    let end = opts.stop_at.unwrap_or(cfg.steps).min(cfg.steps);
    while state.step < end {
        let idx = state.batch_indices(state.step, train.len());
        let batch: Vec<Sample> = idx.iter().map(|&i| train[i].clone()).collect();
        let losses = train_step(&mut state, &batch, &perceptual)?;
        if let Some(dir) = &opts.run_dir {
            append_record(&dir.join(CURVE_FILE), &losses)?;
        }
        if opts.log_every > 0 && state.step % opts.log_every == 0 {
            log::info!(
                "step {}/{}: d {:.4} g {:.4} (gan {:.4} fm {:.4} perc {:.4} l1 {:.4})",
                state.step,
                cfg.steps,
                losses.d_loss,
                losses.g_total,
                losses.g_gan,
                losses.g_fm,
                losses.g_perc,
                losses.g_l1
            );
        }
        curve.push(losses);
        let last = state.step == end;
        if state.step % cfg.val_every == 0 || (last && state.step == cfg.steps) {
            record_validation(&state, &mut validation)?;
        }
        if let Some(dir) = &opts.run_dir {
            if state.step % cfg.ckpt_every == 0 || last {
                checkpoint(&state, dir, state.step % cfg.ckpt_every == 0 || state.step == cfg.steps)?;
            }
        }
    }
    Ok(FitOutcome {
        state,
        curve,
        validation,
    })
}

/// Runs the generator on every record of `split` and writes `out_dir/{id}.png`.
pub fn renovate_split(state: &TrainState, dataset: &PairedDataset, split: Split, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records: Vec<&DatasetRecord> = dataset.split(split).collect();
    records
        .par_iter()
        .map(|r| {
            let lq = dataset.load_lq(r)?.to_rgb();
            let guidance = load_guidance(&state.config, &state.generator, &source_stem(r))?;
            let (out, _) = state.generator.forward(lq.data(), guidance.as_ref(), None)?;
            crate::image::save_image(&Image::from_clamped(out), out_dir.join(format!("{}.png", r.id)))?;
            Ok(r.id.clone())
        })
        .collect()
}

/// Pristine NIQE model fitted on the clean TRAIN images.
pub fn fit_niqe_on_train(dataset: &PairedDataset, cfg: &NiqeConfig) -> Result<NiqeModel> {
    let images = dataset
        .split(Split::Train)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|r| dataset.load_hq(r))
        .collect::<Result<Vec<_>>>()?;
    niqe_fit(&images, cfg)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::degrade::Task;
    use crate::synth::write_synth_faces;
    use crate::train::{build_dataset, load_checkpoint};

    pub(crate) fn tiny_config(task: Task) -> TrainConfig {
        let mut c = TrainConfig::new(task, 32, 6, Seed(21));
        c.channels = vec![4, 8];
        c.disc_channels = vec![4, 8];
        c.perc_channels = vec![4, 8];
        c.batch_size = 2;
        c.val_fraction = 0.2;
        c.test_fraction = 0.2;
        c.val_every = 3;
        c.ckpt_every = 3;
        c
    }

    pub(crate) fn tiny_dataset(cfg: &TrainConfig) -> (tempfile::TempDir, PairedDataset) {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        std::fs::create_dir_all(&src).unwrap();
        write_synth_faces(&src, 10, 40, Seed(4)).unwrap();
        let ds = build_dataset(&src, &tmp.path().join("data"), cfg).unwrap();
        (tmp, ds)
    }

    fn train_batch(ds: &PairedDataset, state: &TrainState) -> Vec<Sample> {
        let recs: Vec<&DatasetRecord> = ds.split(Split::Train).take(2).collect();
        load_samples(ds, &recs, state).unwrap()
    }

    #[test]
    fn step_updates_both_models() {
        let cfg = tiny_config(Task::Renovation);
        let (_tmp, ds) = tiny_dataset(&cfg);
        let mut s = TrainState::init(&cfg).unwrap();
        let before = s.clone();
        let p = PerceptualExtractor::from_config(&cfg.perceptual_config()).unwrap();
        let batch = train_batch(&ds, &s);
        let l = train_step(&mut s, &batch, &p).unwrap();
        assert!([l.d_loss, l.g_gan, l.g_fm, l.g_perc, l.g_l1, l.g_total].iter().all(|v| v.is_finite()));
        assert!(l.grad_norm_g > 0.0 && l.grad_norm_d > 0.0);
        assert_ne!(s.generator.flatten(), before.generator.flatten());
        assert_ne!(s.discriminator.flatten(), before.discriminator.flatten());
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let cfg = tiny_config(Task::Jpeg);
        let (_tmp, ds) = tiny_dataset(&cfg);
        let mut s = TrainState::init(&cfg).unwrap();
        s.opt_g.lr = 0.0;
        s.opt_d.lr = 0.0;
        let p = PerceptualExtractor::from_config(&cfg.perceptual_config()).unwrap();
        let batch = train_batch(&ds, &s);
        let (g0, d0) = (s.generator.clone(), s.discriminator.clone());
        let a = train_step(&mut s, &batch, &p).unwrap();
        let b = train_step(&mut s, &batch, &p).unwrap();
        assert_eq!(s.generator, g0);
        assert_eq!(s.discriminator, d0);
        assert_eq!((a.d_loss, a.g_total), (b.d_loss, b.g_total));
    }

    #[test]
    fn non_finite_input_aborts_with_diagnostic() {
        let cfg = tiny_config(Task::Jpeg);
        let (_tmp, ds) = tiny_dataset(&cfg);
        let mut s = TrainState::init(&cfg).unwrap();
        let p = PerceptualExtractor::from_config(&cfg.perceptual_config()).unwrap();
        let mut batch = train_batch(&ds, &s);
        batch[0].hq[[0, 0, 0]] = f64::NAN;
        let d0 = s.discriminator.clone();
        match train_step(&mut s, &batch, &p) {
            Err(Error::NonFinite { step, diagnostic }) => {
                assert_eq!(step, 1);
                assert!(diagnostic.contains("d_loss"), "{diagnostic}");
            }
            other => panic!("expected a non-finite error, got {other:?}"),
        }
        assert_eq!(s.discriminator, d0);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn batches_are_stateless_per_step() {
        let s = TrainState::init(&tiny_config(Task::Jpeg)).unwrap();
        assert_eq!(s.batch_indices(5, 20), s.batch_indices(5, 20));
        assert_ne!(s.batch_indices(5, 20), s.batch_indices(6, 20));
        assert_eq!(s.batch_indices(0, 1), vec![0]);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let mut cfg = tiny_config(Task::Renovation);
        cfg.lr_decay_start = Some(2);
        let (tmp, ds) = tiny_dataset(&cfg);
        let full = fit(&cfg, &ds, FitOptions::default()).unwrap();
        assert_eq!(full.curve.len(), 6);
        assert_eq!(full.validation.iter().map(|v| v.step).collect::<Vec<_>>(), vec![0, 3, 6]);

        let run = tmp.path().join("run");
        let first = fit(
            &cfg,
            &ds,
            FitOptions {
                run_dir: Some(run.clone()),
                stop_at: Some(4),
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_eq!(first.state.step, 4);
        let resumed = load_checkpoint(&run.join(LATEST_CHECKPOINT)).unwrap();
        assert_eq!(resumed, first.state);
        let second = fit(
            &cfg,
            &ds,
            FitOptions {
                run_dir: Some(run.clone()),
                resume: Some(resumed),
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_eq!(second.curve, full.curve);
        assert_eq!(second.validation, full.validation);
        assert_eq!(second.state, full.state);
        let on_disk: Vec<StepLosses> = read_records(&run.join(CURVE_FILE)).unwrap();
        assert_eq!(on_disk, full.curve);
        assert!(run.join(CHECKPOINT_DIR).join("step_00000003.ckpt").is_file());
        assert!(run.join(CHECKPOINT_DIR).join("step_00000006.ckpt").is_file());
    }

    #[test]
    fn renovated_split_has_one_output_per_record() {
        let cfg = tiny_config(Task::Jpeg);
        let (tmp, ds) = tiny_dataset(&cfg);
        let s = TrainState::init(&cfg).unwrap();
        let out = tmp.path().join("out");
        let ids = renovate_split(&s, &ds, Split::Test, &out).unwrap();
        assert_eq!(ids.len(), ds.split(Split::Test).count());
        for id in ids {
            assert!(out.join(format!("{id}.png")).is_file());
        }
    }
}
