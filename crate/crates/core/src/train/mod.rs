//! Paired datasets, the adversarial training loop, checkpoints and the
//! ablation harness.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod trainer;

pub use ablation::{ablation_table, run_ablation, AblationOutcome, REPORT_FILE, TABLE_FILE};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{Ablation, TrainConfig, MODEL_FORMAT_VERSION, REQUIRED_KEYS};
pub use dataset::{assign_splits, build_dataset, list_images, prepare_hq, DatasetRecord, PairedDataset, Split, MANIFEST_FILE};
pub use trainer::{
    fit, fit_niqe_on_train, load_guidance, load_samples, renovate_split, train_step, validate, FitOptions, FitOutcome, Sample, StepLosses, TrainState,
    ValidationRecord,
};
