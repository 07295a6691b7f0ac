//! Effective configuration: config file keys, then `FACERENOV_<KEY>`
//! environment variables, then `--set key=value` flags, later sources winning.

use std::path::Path;

use face_renovation::train::TrainConfig;

use crate::failure::Failure;

pub const ENV_PREFIX: &str = "FACERENOV_";

/// Environment names read by the flag parser itself, not config keys.
pub const RESERVED_ENV: [&str; 4] = ["WORKERS", "DEVICE", "RUN_ROOT", "LOG"];

/// A command-line or environment value: TOML syntax when it parses, a bare string otherwise.
pub fn parse_value(text: &str) -> toml::Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

pub fn parse_assignment(s: &str) -> Result<(String, toml::Value), Failure> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("`--set {s}`: expected key=value")))?;
    let key = k.trim();
    if key.is_empty() {
        return Err(Failure::Usage(format!("`--set {s}`: empty key")));
    }
    Ok((key.to_string(), parse_value(v.trim())))
}

/// Config-key overrides found in `vars`.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, toml::Value)> {
    let mut out: Vec<(String, toml::Value)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            (!RESERVED_ENV.contains(&rest)).then(|| (rest.to_ascii_lowercase(), parse_value(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Where configuration comes from for one invocation.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub file: Option<std::path::PathBuf>,
    pub env: Vec<(String, toml::Value)>,
    pub sets: Vec<(String, toml::Value)>,
    pub seed: Option<u64>,
}

impl Sources {
    pub fn is_empty(&self) -> bool {
        self.file.is_none() && self.env.is_empty() && self.sets.is_empty() && self.seed.is_none()
    }

    /// Merged table; `defaults` fill keys no source sets.
    pub fn table(&self, defaults: &[(&str, toml::Value)]) -> Result<toml::Table, Failure> {
        let mut t = match &self.file {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        for (k, v) in self.env.iter().chain(&self.sets) {
            t.insert(k.clone(), v.clone());
        }
        if let Some(s) = self.seed {
            t.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        for (k, v) in defaults {
            t.entry(k.to_string()).or_insert_with(|| v.clone());
        }
        Ok(t)
    }

    pub fn train_config(&self, defaults: &[(&str, toml::Value)]) -> Result<TrainConfig, Failure> {
        Ok(TrainConfig::from_table(self.table(defaults)?)?)
    }
}

fn read_table(path: &Path) -> Result<toml::Table, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| Failure::Usage(format!("config {}: {}", path.display(), e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse_as_toml_or_string() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("[8, 16]"), toml::Value::Array(vec![8.into(), 16.into()]));
        assert_eq!(parse_value("renovation"), toml::Value::String("renovation".into()));
        assert_eq!(parse_value("\"jpeg\""), toml::Value::String("jpeg".into()));
    }

    #[test]
    fn later_sources_win() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "task = \"jpeg\"\nresolution = 64\nsteps = 5\nseed = 1\nbatch_size = 2\n").unwrap();
        let src = Sources {
            file: Some(file),
            env: env_overrides([
                ("FACERENOV_BATCH_SIZE".to_string(), "3".to_string()),
                ("FACERENOV_WORKERS".to_string(), "2".to_string()),
                ("OTHER".to_string(), "x".to_string()),
            ]),
            sets: vec![parse_assignment("steps=9").unwrap()],
            seed: Some(4),
        };
        let c = src.train_config(&[]).unwrap();
        assert_eq!((c.batch_size, c.steps, c.seed.0), (3, 9, 4));
    }

    #[test]
    fn bad_assignment_is_usage_error() {
        assert!(matches!(parse_assignment("novalue"), Err(Failure::Usage(_))));
    }
}
