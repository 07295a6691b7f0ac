//! Scoring a set of generated images against their references.

use std::path::Path;

use rayon::prelude::*;

use super::fidelity::{ms_ssim, psnr, ssim};
use super::frechet::frechet_feature_distance;
use super::niqe::{niqe_score, NiqeConfig, NiqeModel};
use super::report::{MetricReport, FRECHET, MS_SSIM, NIQE, PSNR, SSIM};
use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::losses::PerceptualExtractor;
use crate::train::{PairedDataset, Split};

/// Metric table rows the harness reports, in order.
pub const REPORT_METRICS: [(&str, &str); 5] = [
    ("PSNR", PSNR),
    ("SSIM", SSIM),
    ("MS-SSIM", MS_SSIM),
    ("FFD", FRECHET),
    ("NIQE", NIQE),
];

/// Per-image PSNR/SSIM/MS-SSIM (and NIQE when a model is given) plus the
/// set-level Fréchet feature distance between `outputs` and `references`.
pub fn evaluate_images(
    ids: &[String],
    outputs: &[Image],
    references: &[Image],
    niqe: Option<(&NiqeModel, &NiqeConfig)>,
    perceptual: &PerceptualExtractor,
) -> Result<MetricReport> {
    if ids.len() != outputs.len() || ids.len() != references.len() {
        return Err(Error::arg("ids, outputs and references must have equal lengths"));
    }
    if ids.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let rows = (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let (o, r) = (&outputs[i], &references[i]);
            let mut row = vec![(PSNR, psnr(o, r)?), (SSIM, ssim(o, r)?), (MS_SSIM, ms_ssim(o, r)?)];
            if let Some((m, c)) = niqe {
                row.push((NIQE, niqe_score(o, m, c)?));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport::default();
    for (id, row) in ids.iter().zip(rows) {
        for (metric, v) in row {
            report.insert(id, metric, v);
        }
    }
    report.finalize();
    report.set_level(FRECHET, frechet_feature_distance(outputs, references, perceptual)?);
    Ok(report)
}

/// Scores `out_dir/{id}.png` against the clean image of every TEST record.
pub fn evaluate(
    dataset: &PairedDataset,
    out_dir: &Path,
    niqe: Option<(&NiqeModel, &NiqeConfig)>,
    perceptual: &PerceptualExtractor,
) -> Result<MetricReport> {
    let records: Vec<_> = dataset.split(Split::Test).collect();
    if records.is_empty() {
        return Err(Error::Dataset("dataset has no TEST records".into()));
    }
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !out_dir.join(format!("{}.png", r.id)).is_file())
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingOutputs(missing));
    }
    let pairs = records
        .par_iter()
        .map(|r| Ok((load_image(out_dir.join(format!("{}.png", r.id)))?, dataset.load_hq(r)?)))
        .collect::<Result<Vec<(Image, Image)>>>()?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let (outputs, references): (Vec<Image>, Vec<Image>) = pairs.into_iter().unzip();
    evaluate_images(&ids, &outputs, &references, niqe, perceptual)
}
