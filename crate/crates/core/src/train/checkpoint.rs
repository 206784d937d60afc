//! Versioned binary checkpoints: a configuration echo as JSON, the
//! iteration counter, every model tensor (batchnorm running statistics
//! included) and the optimizer moments, all stored as 64-bit floats so that
//! save -> load -> save is byte-identical.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::adam::{Adam, Slot};
use super::TrainConfig;
use crate::binio::{put_f64s, put_str, put_u32, put_u64, Reader};
use crate::error::{Error, ParseError, Result};
use crate::model::ModelParams;
use crate::tensor::Prng;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A restored training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    pub params: ModelParams,
    pub adam: Adam,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &TrainConfig,
    iteration: u64,
    params: &ModelParams,
    adam: &Adam,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let cfg_json = serde_json::to_string(config)
        .map_err(|e| Error::Diagnostic(format!("config serialization failed: {e}")))?;
    put_str(&mut buf, &cfg_json);
    put_u64(&mut buf, iteration);
    put_u64(&mut buf, adam.step_count());

    let tensors = params.named_tensors();
    let n_entries = tensors.len() + 2 * adam.slots().len();
    put_u32(&mut buf, n_entries as u32);
    for (name, t, _) in &tensors {
        put_str(&mut buf, name);
        put_u32(&mut buf, t.rank() as u32);
        for &d in t.shape() {
            put_u32(&mut buf, d as u32);
        }
        put_f64s(&mut buf, t.data());
    }
    for slot in adam.slots() {
        for (prefix, data) in [("adam.m.", &slot.m), ("adam.v.", &slot.v)] {
            put_str(&mut buf, &format!("{prefix}{}", slot.name));
            put_u32(&mut buf, 1);
            put_u32(&mut buf, data.len() as u32);
            put_f64s(&mut buf, data);
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader::new(path, &buf);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    r.expect_version(CHECKPOINT_VERSION)?;
    let cfg_json = r.string()?;
    let config: TrainConfig = serde_json::from_str(&cfg_json)
        .map_err(|e| r.invalid(format!("config echo does not parse: {e}")))?;
    let iteration = r.u64()?;
    let adam_step = r.u64()?;

    let n_entries = r.u32()? as usize;
    let mut entries: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let data = r.f64s(count)?;
        if entries.insert(name.clone(), (shape, data)).is_some() {
            return Err(r.invalid(format!("duplicate tensor entry {name}")));
        }
    }
    r.finish()?;

    // Rebuild the model skeleton from the config echo, then overwrite every
    // tensor from the file.
    let mut throwaway = Prng::new(0);
    let alphabet = config.synth.alphabet()?;
    let mut params = ModelParams::init(
        config.synth.channels,
        config.synth.segment_len,
        config.hidden_size,
        alphabet.n_total(),
        config.dropout,
        &mut throwaway,
    )?;
    let mut used = 0usize;
    for (name, tensor, _) in params.named_tensors_mut() {
        let (shape, data) = entries.get(name).ok_or_else(|| {
            Error::parse(
                path.display().to_string(),
                ParseError::Invalid(format!("missing tensor entry {name}")),
            )
        })?;
        if shape != tensor.shape() {
            return Err(Error::parse(
                path.display().to_string(),
                ParseError::Shape(format!(
                    "{name}: file has {shape:?}, model expects {:?}",
                    tensor.shape()
                )),
            ));
        }
        tensor.data_mut().copy_from_slice(data);
        used += 1;
    }

    let mut adam = Adam::new(
        &params,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut slots = Vec::new();
    for (name, tensor, trainable) in params.named_tensors() {
        if !trainable {
            continue;
        }
        let mut fetch = |prefix: &str| -> Result<Vec<f64>> {
            let key = format!("{prefix}{name}");
            let (shape, data) = entries.get(&key).ok_or_else(|| {
                Error::parse(
                    path.display().to_string(),
                    ParseError::Invalid(format!("missing optimizer entry {key}")),
                )
            })?;
            if shape[0] != tensor.len() {
                return Err(Error::parse(
                    path.display().to_string(),
                    ParseError::Shape(format!(
                        "{key}: {} values, expected {}",
                        shape[0],
                        tensor.len()
                    )),
                ));
            }
            used += 1;
            Ok(data.clone())
        };
        let m = fetch("adam.m.")?;
        let v = fetch("adam.v.")?;
        slots.push(Slot {
            name: name.to_string(),
            m,
            v,
        });
    }
    if used != entries.len() {
        return Err(Error::parse(
            path.display().to_string(),
            ParseError::Invalid(format!(
                "{} unrecognized tensor entries",
                entries.len() - used
            )),
        ));
    }
    adam.restore(adam_step, slots);

    Ok(Checkpoint {
        config,
        iteration,
        params,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::TrainConfig;

    fn small_config() -> TrainConfig {
        let mut cfg = TrainConfig {
            hidden_size: 8,
            iterations: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        cfg.synth.channels = 4;
        cfg
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = small_config();
        let mut rng = Prng::new(5);
        let params = ModelParams::init(4, 50, 8, 4, cfg.dropout, &mut rng).unwrap();
        let adam = Adam::new(&params, cfg.learning_rate, 0.9, 0.999, 1e-8);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &cfg, 17, &params, &adam).unwrap();
        let ck = load_checkpoint(&p1).unwrap();
        assert_eq!(ck.iteration, 17);
        assert_eq!(ck.params, params);
        save_checkpoint(&p2, &ck.config, ck.iteration, &ck.params, &ck.adam).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = small_config();
        let mut rng = Prng::new(6);
        let params = ModelParams::init(4, 50, 8, 4, cfg.dropout, &mut rng).unwrap();
        let adam = Adam::new(&params, 1e-3, 0.9, 0.999, 1e-8);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        // Store with a config claiming a different channel count.
        let mut other = cfg.clone();
        other.synth.channels = 6;
        save_checkpoint(&p, &other, 0, &params, &adam).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Parse {
                    kind: ParseError::Shape(_),
                    ..
                }
            ),
            "{err}"
        );
    }
}
