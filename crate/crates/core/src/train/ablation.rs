//! Trains several model variants on one dataset and tabulates their TEST metrics.

use std::path::Path;

use super::config::{Ablation, TrainConfig};
use super::dataset::{PairedDataset, Split};
use super::trainer::{fit, fit_niqe_on_train, renovate_split, FitOptions};
use crate::error::{Error, Result};
use crate::losses::PerceptualExtractor;
use crate::metrics::{evaluate, render_columns, MetricReport, REPORT_METRICS};

pub const REPORT_FILE: &str = "report.jsonl";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub reports: Vec<(Ablation, MetricReport)>,
    pub table: String,
}

/// One column per variant, one row per reported metric.
pub fn ablation_table(reports: &[(Ablation, MetricReport)]) -> String {
    let cols: Vec<(&str, &MetricReport)> = reports.iter().map(|(v, r)| (v.label(), r)).collect();
    render_columns(&cols, &REPORT_METRICS)
}

/// Trains every variant of `base` with identical data, seeds and schedule,
/// then evaluates each on the TEST split. Everything lands under
/// `out_dir/<variant>/`; the table goes to `out_dir/table.txt`.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[Ablation],
    dataset: &PairedDataset,
    out_dir: &Path,
    log_every: u64,
) -> Result<AblationOutcome> {
    if variants.is_empty() {
        return Err(Error::arg("no ablation variants requested"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let niqe_cfg = base.niqe_config();
    let niqe = match fit_niqe_on_train(dataset, &niqe_cfg) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("NIQE column skipped: {e}");
            None
        }
    };
    let perceptual = PerceptualExtractor::from_config(&base.perceptual_config())?;
    let mut reports = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = base.for_variant(v);
        let dir = out_dir.join(v.label());
        log::info!("ablation variant {}: training {} steps", v.label(), cfg.steps);
        let outcome = fit(
            &cfg,
            dataset,
            FitOptions {
                run_dir: Some(dir.clone()),
                log_every,
                ..FitOptions::default()
            },
        )?;
        let outputs = dir.join("outputs");
        renovate_split(&outcome.state, dataset, Split::Test, &outputs)?;
        let report = evaluate(dataset, &outputs, niqe.as_ref().map(|m| (m, &niqe_cfg)), &perceptual)?;
        let path = dir.join(REPORT_FILE);
        std::fs::write(&path, report.to_jsonl()).map_err(|e| Error::io(&path, e))?;
        reports.push((v, report));
    }
    let table = ablation_table(&reports);
    let path = out_dir.join(TABLE_FILE);
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    Ok(AblationOutcome { reports, table })
}
