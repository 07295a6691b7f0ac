//! Single-file training checkpoints.
//!
//! Layout (little endian): magic `FRNVCKPT`, format version `u32`, config
//! hash (32 bytes), config TOML (`u32` length + UTF-8), step `u64`, batch
//! stream seed `u64`, generator and discriminator Adam step counts `u64`,
//! then a [`TensorArchive`] holding `g.*`, `d.*` and the flattened optimizer
//! moments `opt_g.m`, `opt_g.v`, `opt_d.m`, `opt_d.v`.

use std::path::Path;

use super::config::{TrainConfig, MODEL_FORMAT_VERSION};
use super::trainer::TrainState;
use crate::archive::{put_str, put_u32, put_u64, Reader, TensorArchive};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FRNVCKPT";

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, MODEL_FORMAT_VERSION);
    out.extend_from_slice(&state.config.hash());
    put_str(&mut out, &state.config.to_toml());
    put_u64(&mut out, state.step);
    put_u64(&mut out, state.batch_seed().0);
    put_u64(&mut out, state.opt_g.t);
    put_u64(&mut out, state.opt_d.t);
    let mut ar = TensorArchive::default();
    ar.push_params("g", &state.generator);
    ar.push_params("d", &state.discriminator);
    ar.push("opt_g.m", state.opt_g.m.clone());
    ar.push("opt_g.v", state.opt_g.v.clone());
    ar.push("opt_d.m", state.opt_d.m.clone());
    ar.push("opt_d.v", state.opt_d.v.clone());
    ar.encode(&mut out);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader::new(bytes);
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version(format!(
            "checkpoint format version {version}, this build reads version {MODEL_FORMAT_VERSION}"
        )));
    }
    let stored: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let text = r.string()?;
    let config = TrainConfig::from_toml(&text).map_err(|e| Error::Version(format!("embedded config unreadable: {e}")))?;
    if config.hash() != stored {
        return Err(Error::Version(
            "config hash mismatch: checkpoint was written by an incompatible model version".into(),
        ));
    }
    let step = r.u64()?;
    let batch_seed = r.u64()?;
    let (tg, td) = (r.u64()?, r.u64()?);
    let ar = TensorArchive::from_bytes(r.rest())?;
    let mut state = TrainState::init(&config)?;
    if state.batch_seed().0 != batch_seed {
        return Err(Error::Checkpoint("batch stream seed does not match the embedded config".into()));
    }
    ar.load_params("g", &mut state.generator)?;
    ar.load_params("d", &mut state.discriminator)?;
    let moments = |name: &str, n: usize| -> Result<Vec<f64>> {
        let e = ar.get(name).ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
        if e.data.len() != n {
            return Err(Error::Checkpoint(format!("entry `{name}` has {} values, need {n}", e.data.len())));
        }
        Ok(e.data.clone())
    };
    state.opt_g.m = moments("opt_g.m", state.opt_g.m.len())?;
    state.opt_g.v = moments("opt_g.v", state.opt_g.v.len())?;
    state.opt_d.m = moments("opt_d.m", state.opt_d.m.len())?;
    state.opt_d.v = moments("opt_d.v", state.opt_d.v.len())?;
    state.opt_g.t = tg;
    state.opt_d.t = td;
    state.step = step;
    Ok(state)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::Task;
    use crate::losses::PerceptualExtractor;
    use crate::train::trainer::tests::{tiny_config, tiny_dataset};
    use crate::train::{load_samples, train_step, Split};

    fn trained_state() -> TrainState {
        let cfg = tiny_config(Task::Jpeg);
        let (_tmp, ds) = tiny_dataset(&cfg);
        let mut s = TrainState::init(&cfg).unwrap();
        let p = PerceptualExtractor::from_config(&cfg.perceptual_config()).unwrap();
        let recs: Vec<_> = ds.split(Split::Train).take(2).collect();
        let batch = load_samples(&ds, &recs, &s).unwrap();
        train_step(&mut s, &batch, &p).unwrap();
        s
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let s = trained_state();
        let bytes = encode_checkpoint(&s);
        let loaded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded, s);
        assert_eq!(encode_checkpoint(&loaded), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&s, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_checkpoint(&path).unwrap(), s);
    }

    #[test]
    fn version_and_hash_mismatch_are_version_errors() {
        let bytes = encode_checkpoint(&trained_state());
        let mut wrong_version = bytes.clone();
        wrong_version[8] ^= 0xff;
        assert!(matches!(decode_checkpoint(&wrong_version), Err(Error::Version(_))));
        let mut wrong_hash = bytes.clone();
        wrong_hash[12] ^= 0x01;
        assert!(matches!(decode_checkpoint(&wrong_hash), Err(Error::Version(_))));
        assert!(matches!(decode_checkpoint(b"not a checkpoint"), Err(Error::Checkpoint(_))));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 5]).is_err());
    }
}
