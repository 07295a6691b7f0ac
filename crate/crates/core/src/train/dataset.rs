//! Paired low/high-quality datasets generated from a directory of clean images.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::degrade::{task_pipeline, DegradationPipeline};
use crate::error::{Error, Result};
use crate::image::{load_image, quantize_image, save_image, Image};
use crate::resample::resize_to;
use crate::seed::Seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One generated pair; paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub split: Split,
    pub source: String,
    pub hq: PathBuf,
    pub lq: PathBuf,
    pub pipeline: DegradationPipeline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub records: Vec<DatasetRecord>,
}

/// Decodable image files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Center square crop resized to `resolution`, quantized to bytes.
pub fn prepare_hq(img: &Image, resolution: usize) -> Result<Image> {
    let sq = img.to_rgb().center_crop_square();
    Ok(quantize_image(&resize_to(&sq, resolution, resolution)?))
}

/// Split of each index: a seeded permutation puts the first share in TEST,
/// the next in VAL and the rest in TRAIN (at least one TRAIN image).
pub fn assign_splits(n: usize, val_fraction: f64, test_fraction: f64, seed: Seed) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.derive_str("split").rng());
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n.saturating_sub(1));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1 + n_test));
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_test {
            splits[i] = Split::Test;
        } else if rank < n_test + n_val {
            splits[i] = Split::Val;
        }
    }
    splits
}

/// Crops, degrades and writes every image of `hq_dir` under `out_dir`
/// (`hq/`, `lq/`, `manifest.jsonl`). Image `i` uses seed `cfg.seed.derive(i)`.
pub fn build_dataset(hq_dir: &Path, out_dir: &Path, cfg: &TrainConfig) -> Result<PairedDataset> {
    let sources = list_images(hq_dir)?;
    if sources.is_empty() {
        return Err(Error::Dataset(format!("no PNG/JPEG images in {}", hq_dir.display())));
    }
    for sub in ["hq", "lq"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let splits = assign_splits(sources.len(), cfg.val_fraction, cfg.test_fraction, cfg.seed);
    let ranges = cfg.ranges();
    let block = cfg.effective_mosaic_block();
    let records: Vec<DatasetRecord> = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let hq = prepare_hq(&load_image(src)?, cfg.resolution)?;
            let pipeline = task_pipeline(cfg.task, cfg.seed.derive(i as u64), &ranges, block)?;
            let lq = pipeline.apply(&hq)?;
            let id = format!("{i:05}");
            let rec = DatasetRecord {
                split: splits[i],
                source: src.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                hq: PathBuf::from("hq").join(format!("{id}.png")),
                lq: PathBuf::from("lq").join(format!("{id}.png")),
                pipeline,
                id,
            };
            save_image(&hq, out_dir.join(&rec.hq))?;
            save_image(&lq, out_dir.join(&rec.lq))?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    let ds = PairedDataset {
        root: out_dir.to_path_buf(),
        records,
    };
    ds.write_manifest()?;
    Ok(ds)
}

impl PairedDataset {
    pub fn manifest_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.manifest_text().as_bytes()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Dataset(format!("{} line {}: {e}", path.display(), n + 1)))
            })
            .collect::<Result<Vec<DatasetRecord>>>()?;
        if records.is_empty() {
            return Err(Error::Dataset(format!("{} lists no records", path.display())));
        }
        Ok(PairedDataset {
            root: root.to_path_buf(),
            records,
        })
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == s)
    }

    pub fn load_hq(&self, r: &DatasetRecord) -> Result<Image> {
        load_image(self.root.join(&r.hq))
    }

    pub fn load_lq(&self, r: &DatasetRecord) -> Result<Image> {
        load_image(self.root.join(&r.lq))
    }

    /// Re-applies the recorded pipeline to the stored clean image.
    pub fn replay(&self, r: &DatasetRecord) -> Result<Image> {
        Ok(quantize_image(&r.pipeline.apply(&self.load_hq(r)?)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{DegradationKind, DegradationRanges, Family, Task};
    use crate::synth::write_synth_faces;

    fn cfg(task: Task) -> TrainConfig {
        let mut c = TrainConfig::new(task, 32, 1, Seed(9));
        c.channels = vec![4, 4];
        c.val_fraction = 0.2;
        c.test_fraction = 0.2;
        c
    }

    #[test]
    fn splits_are_deterministic_and_sized() {
        let s = assign_splits(100, 0.1, 0.2, Seed(1));
        assert_eq!(s, assign_splits(100, 0.1, 0.2, Seed(1)));
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 20);
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 10);
        assert_eq!(assign_splits(1, 0.5, 0.4, Seed(1)), vec![Split::Train]);
    }

    #[test]
    fn build_is_reproducible_and_replayable() {
        let src = tempfile::tempdir().unwrap();
        write_synth_faces(src.path(), 6, 40, Seed(2)).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let da = build_dataset(src.path(), a.path(), &cfg(Task::Renovation)).unwrap();
        let db = build_dataset(src.path(), b.path(), &cfg(Task::Renovation)).unwrap();
        assert_eq!(da.manifest_text(), db.manifest_text());
        let loaded = PairedDataset::load(a.path()).unwrap();
        assert_eq!(loaded.records, da.records);
        for r in &loaded.records {
            assert!(!r.pipeline.contains(DegradationKind::Mosaic));
            let lq = loaded.load_lq(r).unwrap();
            assert_eq!(loaded.replay(r).unwrap(), lq);
            assert_eq!((lq.height(), lq.width()), (32, 32));
        }
    }

    #[test]
    fn empty_dir_is_an_error() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(build_dataset(src.path(), out.path(), &cfg(Task::Jpeg)), Err(Error::Dataset(_))));
    }

    #[test]
    fn denoise_families_are_uniform() {
        let r = DegradationRanges::default();
        let mut counts = std::collections::HashMap::new();
        for i in 0..3000u64 {
            let p = task_pipeline(Task::Denoise, Seed(5).derive(i), &r, 2).unwrap();
            assert_eq!(p.families(), vec![Family::Noise]);
            *counts.entry(p.stages[0].spec.kind).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        for c in counts.values() {
            assert!((*c as f64 / 3000.0 - 1.0 / 3.0).abs() <= 0.03, "{counts:?}");
        }
    }
}
