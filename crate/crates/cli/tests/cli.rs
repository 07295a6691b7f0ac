use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
task = \"renovation\"
resolution = 32
steps = 4
seed = 5
channels = [4, 8]
disc_channels = [4, 8]
perc_channels = [4, 8]
batch_size = 2
val_fraction = 0.2
test_fraction = 0.2
val_every = 2
ckpt_every = 2
";

fn facerenov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facerenov"))
        .args(args)
        .env("FACERENOV_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> PathBuf {
    let out = facerenov(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    faces: PathBuf,
    config: PathBuf,
    dataset: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let faces = ok(&["synth", "--count", "10", "--size", "40", "--seed", "3", "--out", s(&root.join("faces"))]);
    let dataset = ok(&["degrade", "--config", s(&config), "--input", s(&faces), "--out", s(&root.join("data"))]);
    Fixture {
        _tmp: tmp,
        root,
        faces,
        config,
        dataset,
    }
}

fn train(f: &Fixture, dir: &str, extra: &[&str]) -> PathBuf {
    let out = f.root.join(dir);
    let mut args = vec!["train", "--config", s(&f.config), "--dataset", s(&f.dataset), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(facerenov(&["bogus"]).status.code(), Some(1));
    assert_eq!(facerenov(&["renovate"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "task = \"jpeg\"\nresolution = 32\nseed = 1\n").unwrap();
    let out = facerenov(&["train", "--config", s(&cfg), "--dataset", "x", "--run-root", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`steps`"));
    let out = facerenov(&["synth", "--device", "gpu", "--run-root", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(facerenov(&["--help"]).status.code(), Some(0));
}

#[test]
fn degrade_is_reproducible() {
    let f = fixture();
    let again = ok(&["degrade", "--config", s(&f.config), "--input", s(&f.faces), "--out", s(&f.root.join("again"))]);
    let a = std::fs::read_to_string(f.dataset.join("manifest.jsonl")).unwrap();
    let b = std::fs::read_to_string(again.join("manifest.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 10);
    assert!(!a.contains("mosaic"));
    let echoed = std::fs::read_to_string(f.dataset.join("effective_config.toml")).unwrap();
    assert!(echoed.contains("resolution = 32"));
    assert!(f.dataset.join("run.json").is_file());
    assert!(!f.dataset.join("run.lock").exists());

    let other = ok(&[
        "degrade", "--config", s(&f.config), "--input", s(&f.faces), "--seed", "6", "--task", "jpeg",
        "--run-root", s(&f.root.join("runs")),
    ]);
    assert!(other.starts_with(f.root.join("runs")));
    assert_ne!(std::fs::read_to_string(other.join("manifest.jsonl")).unwrap(), a);
}

#[test]
fn train_resume_renovate_evaluate_ablate() {
    let f = fixture();
    let full = train(&f, "full", &[]);
    assert!(full.join("effective_config.toml").is_file());
    assert!(full.join("latest.ckpt").is_file());

    let staged = train(&f, "staged", &["--stop-at", "2"]);
    ok(&["train", "--resume", s(&staged)]);
    let curve = |d: &Path| std::fs::read_to_string(d.join("curve.jsonl")).unwrap();
    assert_eq!(curve(&full).lines().count(), 4);
    assert_eq!(curve(&staged), curve(&full));
    assert_eq!(
        std::fs::read(staged.join("latest.ckpt")).unwrap(),
        std::fs::read(full.join("latest.ckpt")).unwrap()
    );

    let ckpt = full.join("latest.ckpt");
    let inputs = f.root.join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    for name in ["face_00000.png", "face_00001.png", "face_00002.png"] {
        std::fs::copy(f.faces.join(name), inputs.join(name)).unwrap();
    }
    let r1 = ok(&["renovate", "--checkpoint", s(&ckpt), "--input", s(&inputs), "--grid", "--out", s(&f.root.join("r1"))]);
    let r2 = ok(&["renovate", "--checkpoint", s(&ckpt), "--input", s(&inputs), "--out", s(&f.root.join("r2"))]);
    assert_eq!(std::fs::read_dir(r1.join("images")).unwrap().count(), 3);
    let a = std::fs::read(r1.join("images/face_00001.png")).unwrap();
    assert_eq!(a, std::fs::read(r2.join("images/face_00001.png")).unwrap());
    let grid = image_dims(&r1.join("grid.png"));
    assert_eq!(grid, (3 * 32, 2 * 32));

    let probe = ok(&[
        "ablate", "--checkpoint", s(&ckpt), "--image", s(&inputs.join("face_00001.png")), "--stages", "all",
        "--out", s(&f.root.join("probe_all")),
    ]);
    assert_eq!(std::fs::read(probe.join("ablate.png")).unwrap(), a);
    let probe = ok(&[
        "ablate", "--checkpoint", s(&ckpt), "--image", s(&inputs.join("face_00001.png")), "--stages", "none;1;0,1",
        "--out", s(&f.root.join("probe3")),
    ]);
    assert_eq!(image_dims(&probe.join("ablate.png")), (32, 3 * 32));
    let bad = facerenov(&[
        "ablate", "--checkpoint", s(&ckpt), "--image", s(&inputs.join("face_00001.png")), "--stages", "0,7",
        "--out", s(&f.root.join("probe_bad")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("0..2"));

    let niqe = ["--niqe-patch", "16", "--niqe-min-images", "4"];
    let mut args = vec!["evaluate", "--dataset", s(&f.dataset)];
    args.extend_from_slice(&niqe);
    let gt = f.dataset.join("hq");
    let mut gt_args = args.clone();
    gt_args.extend_from_slice(&["--outputs", s(&gt), "--out"]);
    let gt_out = f.root.join("eval_gt");
    gt_args.push(s(&gt_out));
    let ev = ok(&gt_args);
    let report = std::fs::read_to_string(ev.join("report.jsonl")).unwrap();
    for m in ["psnr", "ssim", "ms_ssim", "niqe", "frechet_feature_distance"] {
        assert!(report.contains(m), "{m} missing from {report}");
    }
    let table = std::fs::read_to_string(ev.join("table.txt")).unwrap();
    let row = table.lines().nth(1).unwrap().to_string();
    assert!(row.contains("inf") && row.contains("1.0000"), "{row}");

    let mut model_args = args.clone();
    let model_out = f.root.join("eval_model");
    model_args.extend_from_slice(&["--checkpoint", s(&ckpt), "--out", s(&model_out)]);
    ok(&model_args);

    let empty = f.root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let mut missing = args.clone();
    let missing_out = f.root.join("eval_missing");
    missing.extend_from_slice(&["--outputs", s(&empty), "--out", s(&missing_out)]);
    let out = facerenov(&missing);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing outputs"));
}

#[test]
fn locked_run_dir_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("run.lock"), "1").unwrap();
    let out = facerenov(&["synth", "--count", "1", "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn env_overrides_reach_the_config() {
    let f = fixture();
    let out = Command::new(env!("CARGO_BIN_EXE_facerenov"))
        .args(["degrade", "--config", s(&f.config), "--input", s(&f.faces), "--out", s(&f.root.join("env"))])
        .env("FACERENOV_LOG", "warn")
        .env("FACERENOV_JPEG_QUALITY", "[40, 41]")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = std::fs::read_to_string(f.root.join("env/effective_config.toml")).unwrap();
    assert!(echoed.contains("jpeg_quality = [40, 41]"), "{echoed}");
}

fn image_dims(p: &Path) -> (usize, usize) {
    let img = face_renovation::load_image(p).unwrap();
    (img.height(), img.width())
}
