//! Output directories: one per invocation, guarded by a lock file and
//! described by `run.json`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::failure::Failure;

pub const LOCK_FILE: &str = "run.lock";
pub const RUN_MANIFEST: &str = "run.json";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub started: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Named inputs such as the dataset directory or checkpoint.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Produced files, relative to the run directory.
    #[serde(default)]
    pub outputs: Vec<String>,
}

pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
}

fn now() -> String {
    chrono::Local::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, false)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

impl RunDir {
    /// `explicit` when given, else a fresh `<root>/<command>-<timestamp>`.
    pub fn create(command: &str, root: &Path, explicit: Option<&Path>) -> Result<Self, Failure> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
                let base = root.join(format!("{command}-{stamp}"));
                let mut p = base.clone();
                let mut n = 2;
                while p.exists() {
                    p = PathBuf::from(format!("{}-{n}", base.display()));
                    n += 1;
                }
                p
            }
        };
        Self::open(command, &path, None)
    }

    /// Locks `path` (creating it) and starts a manifest, keeping the inputs
    /// of `previous` when continuing an earlier run.
    pub fn open(command: &str, path: &Path, previous: Option<RunManifest>) -> Result<Self, Failure> {
        std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))?;
        let lock = path.join(LOCK_FILE);
        let mut f = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Failure::Runtime(format!(
                    "{} is locked by another writer (remove {} if that process is gone)",
                    path.display(),
                    lock.display()
                )),
                _ => io_failure(&lock, e),
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        let mut manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: std::env::args().collect(),
            started: now(),
            ..RunManifest::default()
        };
        if let Some(prev) = previous {
            manifest.inputs = prev.inputs;
            manifest.outputs = prev.outputs;
        }
        Ok(RunDir {
            path: path.to_path_buf(),
            manifest,
        })
    }

    pub fn read_manifest(path: &Path) -> Result<RunManifest, Failure> {
        let p = path.join(RUN_MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| io_failure(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))
    }

    pub fn join(&self, rel: &str) -> PathBuf {
        self.path.join(rel)
    }

    pub fn input(&mut self, name: &str, value: &Path) {
        self.manifest.inputs.insert(name.to_string(), value.display().to_string());
    }

    pub fn output(&mut self, rel: &str) {
        if !self.manifest.outputs.iter().any(|o| o == rel) {
            self.manifest.outputs.push(rel.to_string());
        }
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<PathBuf, Failure> {
        let p = self.join(rel);
        std::fs::write(&p, contents).map_err(|e| io_failure(&p, e))?;
        self.output(rel);
        Ok(p)
    }

    pub fn echo_config(&mut self, cfg: &face_renovation::train::TrainConfig) -> Result<(), Failure> {
        self.manifest.config_hash = Some(cfg.hash_hex());
        self.write(EFFECTIVE_CONFIG, cfg.to_toml().as_bytes())?;
        Ok(())
    }

    fn save_manifest(&self) -> Result<(), Failure> {
        let p = self.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&p, text + "\n").map_err(|e| io_failure(&p, e))
    }

    /// Writes the final manifest and releases the lock.
    pub fn finish(mut self) -> Result<PathBuf, Failure> {
        self.manifest.finished = Some(now());
        self.save_manifest()?;
        Ok(self.path.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if self.manifest.finished.is_none() {
            let _ = self.save_manifest();
        }
        let _ = std::fs::remove_file(self.path.join(LOCK_FILE));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_blocks_a_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r");
        let run = RunDir::open("x", &p, None).unwrap();
        assert!(matches!(RunDir::open("x", &p, None), Err(Failure::Runtime(_))));
        run.finish().unwrap();
        assert!(!p.join(LOCK_FILE).exists());
        assert_eq!(RunDir::read_manifest(&p).unwrap().command, "x");
        RunDir::open("x", &p, None).unwrap();
    }

    #[test]
    fn timestamped_dirs_do_not_collide() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunDir::create("t", dir.path(), None).unwrap();
        let b = RunDir::create("t", dir.path(), None).unwrap();
        assert_ne!(a.path, b.path);
        assert!(a.path.file_name().unwrap().to_string_lossy().starts_with("t-"));
    }
}
