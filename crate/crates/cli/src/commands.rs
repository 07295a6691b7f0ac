use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;

use face_renovation::degrade::Task;
use face_renovation::generator::ablate_stage_forward;
use face_renovation::image::{grid, load_image, save_image, Image};
use face_renovation::losses::{PerceptualConfig, PerceptualExtractor};
use face_renovation::metrics::{self, render_table, NiqeConfig};
use face_renovation::synth::write_synth_faces;
use face_renovation::train::{
    build_dataset, fit, fit_niqe_on_train, list_images, load_checkpoint, load_guidance, prepare_hq, renovate_split,
    run_ablation, Ablation, FitOptions, PairedDataset, Split, TrainState,
};
use face_renovation::Seed;

use crate::failure::Failure;
use crate::rundir::RunDir;
use crate::settings::Sources;

pub struct Context {
    pub sources: Sources,
    pub run_root: PathBuf,
    pub out: Option<PathBuf>,
}

impl Context {
    fn run_dir(&self, command: &str) -> Result<RunDir, Failure> {
        RunDir::create(command, &self.run_root, self.out.as_deref())
    }
}

fn finish(run: RunDir) -> Result<(), Failure> {
    let path = run.finish()?;
    println!("{}", path.display());
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

pub fn synth(ctx: &Context, a: SynthArgs) -> Result<(), Failure> {
    let mut run = ctx.run_dir("synth")?;
    let seed = Seed(ctx.sources.seed.unwrap_or(0));
    for p in write_synth_faces(&run.path, a.count, a.size, seed)? {
        run.output(&p.file_name().expect("file name").to_string_lossy());
    }
    finish(run)
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Directory of clean images.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// sr4x, halluc16x, denoise, deblur, jpeg or renovation.
    #[arg(long)]
    task: Option<Task>,
    /// Working resolution of the pairs.
    #[arg(long)]
    resolution: Option<usize>,
}

pub fn degrade(ctx: &Context, a: DegradeArgs) -> Result<(), Failure> {
    let mut defaults = vec![("steps", toml::Value::Integer(0)), ("seed", toml::Value::Integer(0))];
    let mut sources = ctx.sources.clone();
    if let Some(t) = a.task {
        sources
            .sets
            .push(("task".into(), toml::Value::try_from(t).expect("task serializes")));
    }
    if let Some(r) = a.resolution {
        sources.sets.push(("resolution".into(), toml::Value::Integer(r as i64)));
    }
    defaults.push(("resolution", toml::Value::Integer(64)));
    let cfg = sources.train_config(&defaults)?;
    let mut run = ctx.run_dir("degrade")?;
    run.input("input", &a.input);
    run.echo_config(&cfg)?;
    let ds = build_dataset(&a.input, &run.path, &cfg)?;
    run.output(face_renovation::train::MANIFEST_FILE);
    for r in &ds.records {
        run.output(&r.hq.display().to_string());
        run.output(&r.lq.display().to_string());
    }
    log::info!("{} pairs written", ds.records.len());
    finish(run)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `degrade`.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Continue the run in this directory from its latest checkpoint.
    #[arg(long, value_name = "RUN_DIR")]
    resume: Option<PathBuf>,
    /// Log losses every N steps.
    #[arg(long, default_value_t = 50)]
    log_every: u64,
    /// Stop (with a checkpoint) once N steps are complete; continue later with `--resume`.
    #[arg(long, value_name = "N")]
    stop_at: Option<u64>,
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<(), Failure> {
    let (mut run, cfg, state) = match &a.resume {
        Some(dir) => {
            let prev = RunDir::read_manifest(dir)?;
            let state = load_checkpoint(&dir.join(face_renovation::train::trainer::LATEST_CHECKPOINT))?;
            let cfg = if ctx.sources.is_empty() {
                state.config.clone()
            } else {
                ctx.sources.train_config(&[])?
            };
            if cfg != state.config {
                return Err(Failure::Usage(format!(
                    "effective config differs from the one stored in {}",
                    dir.display()
                )));
            }
            (RunDir::open("train", dir, Some(prev))?, cfg, Some(state))
        }
        None => {
            let cfg = ctx.sources.train_config(&[])?;
            (ctx.run_dir("train")?, cfg, None)
        }
    };
    let dataset = match (&a.dataset, run.manifest.inputs.get("dataset")) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => return Err(Failure::Usage("--dataset is required".into())),
    };
    run.input("dataset", &dataset);
    run.echo_config(&cfg)?;
    let ds = PairedDataset::load(&dataset)?;
    let outcome = fit(
        &cfg,
        &ds,
        FitOptions {
            run_dir: Some(run.path.clone()),
            resume: state,
            stop_at: a.stop_at,
            log_every: a.log_every,
        },
    )?;
    for f in ["curve.jsonl", "validation.jsonl", "latest.ckpt"] {
        run.output(f);
    }
    if let Some(v) = outcome.validation.last() {
        log::info!("final validation at step {}: psnr {:.3} ssim {:.4}", v.step, v.psnr, v.ssim);
    }
    finish(run)
}

#[derive(Debug, Args)]
pub struct RenovateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Directory of face crops.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Also write `grid.png` with one input|output row per image.
    #[arg(long)]
    grid: bool,
}

fn renovate_one(state: &TrainState, path: &Path) -> Result<(Image, Image), Failure> {
    let input = prepare_hq(&load_image(path)?, state.generator.resolution())?;
    let guidance = load_guidance(&state.config, &state.generator, &file_stem(path))?;
    let (out, _) = state.generator.forward(input.data(), guidance.as_ref(), None)?;
    Ok((input, Image::from_clamped(out)))
}

pub fn renovate(ctx: &Context, a: RenovateArgs) -> Result<(), Failure> {
    let state = load_checkpoint(&a.checkpoint)?;
    let inputs = list_images(&a.input)?;
    if inputs.is_empty() {
        return Err(Failure::Runtime(format!("no PNG/JPEG images in {}", a.input.display())));
    }
    let mut run = ctx.run_dir("renovate")?;
    run.input("checkpoint", &a.checkpoint);
    run.input("input", &a.input);
    run.echo_config(&state.config)?;
    let images = run.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Failure::Runtime(format!("{}: {e}", images.display())))?;
    let pairs = inputs
        .par_iter()
        .map(|p| {
            let (input, out) = renovate_one(&state, p)?;
            save_image(&out, images.join(format!("{}.png", file_stem(p))))?;
            Ok((input, out))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    for p in &inputs {
        run.output(&format!("images/{}.png", file_stem(p)));
    }
    if a.grid {
        let panels: Vec<Image> = pairs.into_iter().flat_map(|(i, o)| [i, o]).collect();
        save_image(&grid(&panels, 2)?, run.join("grid.png"))?;
        run.output("grid.png");
    }
    finish(run)
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory written by `degrade`.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Renovate the TEST split with this checkpoint first.
    #[arg(long, value_name = "FILE", conflicts_with = "outputs", required_unless_present = "outputs")]
    checkpoint: Option<PathBuf>,
    /// Directory holding `<id>.png` for every TEST record.
    #[arg(long, value_name = "DIR")]
    outputs: Option<PathBuf>,
    /// NIQE patch size.
    #[arg(long)]
    niqe_patch: Option<usize>,
    /// Fewest TRAIN images the NIQE model may be fitted on.
    #[arg(long)]
    niqe_min_images: Option<usize>,
}

pub fn evaluate(ctx: &Context, a: EvaluateArgs) -> Result<(), Failure> {
    let ds = PairedDataset::load(&a.dataset)?;
    let state = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let (perc_cfg, mut niqe_cfg) = match &state {
        Some(s) => (s.config.perceptual_config(), s.config.niqe_config()),
        None => (PerceptualConfig::default(), NiqeConfig::default()),
    };
    if let Some(p) = a.niqe_patch {
        niqe_cfg.patch_size = p;
    }
    if let Some(n) = a.niqe_min_images {
        niqe_cfg.min_images = n;
    }
    niqe_cfg.validate()?;
    let mut run = ctx.run_dir("evaluate")?;
    run.input("dataset", &a.dataset);
    let outputs = match (&state, &a.outputs) {
        (Some(s), _) => {
            run.input("checkpoint", a.checkpoint.as_deref().expect("checkpoint given"));
            let dir = run.join("outputs");
            renovate_split(s, &ds, Split::Test, &dir)?;
            run.output("outputs");
            dir
        }
        (None, Some(o)) => {
            run.input("outputs", o);
            o.clone()
        }
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let perceptual = PerceptualExtractor::from_config(&perc_cfg)?;
    let niqe = fit_niqe_on_train(&ds, &niqe_cfg)?;
    run.write("niqe_model.json", niqe.to_json().as_bytes())?;
    let report = metrics::evaluate(&ds, &outputs, Some((&niqe, &niqe_cfg)), &perceptual)?;
    run.write("report.jsonl", report.to_jsonl().as_bytes())?;
    let table = render_table(&[("model", &report)]);
    run.write("table.txt", table.as_bytes())?;
    eprint!("{table}");
    finish(run)
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Active guidance levels per panel, `;`-separated: `all`, `none` or
    /// comma-separated level indices (0 = finest), e.g. `none;3;2,3;all`.
    #[arg(long, value_name = "SPEC")]
    stages: String,
}

/// Parses `all`, `none` or index lists separated by `;`.
pub fn parse_stage_spec(spec: &str, n_stages: usize) -> Result<Vec<BTreeSet<usize>>, Failure> {
    let sets: Vec<BTreeSet<usize>> = spec
        .split(';')
        .map(|part| match part.trim() {
            "all" => Ok((0..n_stages).collect()),
            "none" | "" => Ok(BTreeSet::new()),
            list => list
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        Failure::Usage(format!("bad stage index `{s}` (valid range 0..{n_stages})"))
                    })
                })
                .collect(),
        })
        .collect::<Result<_, _>>()?;
    for s in &sets {
        if let Some(bad) = s.iter().find(|&&i| i >= n_stages) {
            return Err(Failure::Usage(format!("stage index {bad} out of range 0..{n_stages}")));
        }
    }
    Ok(sets)
}

pub fn ablate(ctx: &Context, a: AblateArgs) -> Result<(), Failure> {
    let state = load_checkpoint(&a.checkpoint)?;
    let g = &state.generator;
    let sets = parse_stage_spec(&a.stages, g.n_stages())?;
    let input = prepare_hq(&load_image(&a.image)?, g.resolution())?;
    let panels = sets
        .par_iter()
        .map(|s| ablate_stage_forward(&input, g, s))
        .collect::<face_renovation::Result<Vec<Image>>>()?;
    let mut run = ctx.run_dir("ablate")?;
    run.input("checkpoint", &a.checkpoint);
    run.input("image", &a.image);
    save_image(&grid(&panels, panels.len())?, run.join("ablate.png"))?;
    run.output("ablate.png");
    finish(run)
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Dataset directory written by `degrade`.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Comma-separated variants: 16xface, fixconv, default, l1, spade.
    #[arg(long, default_value = "16xface,fixconv,default,l1", value_delimiter = ',')]
    variants: Vec<Ablation>,
    #[arg(long, default_value_t = 50)]
    log_every: u64,
}

pub fn ablation_suite(ctx: &Context, a: SuiteArgs) -> Result<(), Failure> {
    let base = ctx.sources.train_config(&[])?;
    let ds = PairedDataset::load(&a.dataset)?;
    let mut run = ctx.run_dir("ablation-suite")?;
    run.input("dataset", &a.dataset);
    run.echo_config(&base)?;
    let outcome = run_ablation(&base, &a.variants, &ds, &run.path, a.log_every)?;
    for v in &a.variants {
        run.output(v.label());
    }
    run.output(face_renovation::train::TABLE_FILE);
    eprint!("{}", outcome.table);
    finish(run)
}
