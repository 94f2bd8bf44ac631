//! Self-describing binary checkpoint container.
//!
//! Layout: an 8-byte versioned magic, a little-endian u32 length, a JSON
//! header (model config, head presence, provenance, parameter descriptors,
//! optional training-state descriptor), then the raw payload: each
//! parameter's values as little-endian doubles in header order, followed by
//! first/second ADAM moment arrays for the parameters the training state
//! lists.

use serde::{Deserialize, Serialize};
use speechtraits_core::model::{Model, ModelConfig, Task};
use speechtraits_core::train::TrainState;
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{io_err, CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"STCKPT01";

/// Who produced the checkpoint, under which seed and config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamDesc {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

/// Optimizer state and selection bookkeeping stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingBlock {
    pub step: u64,
    pub epoch: usize,
    pub dev_score: f64,
    /// Parameter names carrying ADAM moments, in payload order.
    pub moment_params: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    has_age_head: bool,
    has_gender_head: bool,
    provenance: Provenance,
    params: Vec<ParamDesc>,
    training: Option<TrainingBlock>,
}

/// A loaded checkpoint: the model plus optional training state.
pub struct Checkpoint {
    pub model: Model,
    pub training: Option<(TrainingBlock, TrainState)>,
    pub provenance: Provenance,
}

/// Serialize a model (and optionally its optimizer state) to `path`.
pub fn save(
    path: &Path,
    model: &Model,
    training: Option<(&TrainState, usize, f64)>,
    provenance: &Provenance,
) -> CliResult<()> {
    let params: Vec<ParamDesc> = model
        .params
        .iter()
        .map(|p| ParamDesc {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            trainable: p.trainable,
        })
        .collect();
    let training_block = training.map(|(state, epoch, dev_score)| TrainingBlock {
        step: state.step,
        epoch,
        dev_score,
        moment_params: state
            .moments
            .keys()
            .map(|&i| model.params[i].name.clone())
            .collect(),
    });
    let header = Header {
        format_version: 1,
        config: model.config.clone(),
        has_age_head: model.has_age_head(),
        has_gender_head: model.has_gender_head(),
        provenance: provenance.clone(),
        params,
        training: training_block,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CliError::Runtime(format!("checkpoint header: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for p in &model.params {
        for &v in p.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some((state, _, _)) = training {
        for (_, (m, v)) in state.moments.iter() {
            for &x in m.iter().chain(v.iter()) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Load and validate a checkpoint.
pub fn load(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let fail = |m: String| CliError::Runtime(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(fail("not a speechtraits checkpoint (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if 12 + header_len > bytes.len() {
        return Err(fail("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| fail(format!("invalid header: {e}")))?;
    if header.format_version != 1 {
        return Err(fail(format!(
            "unsupported checkpoint format version {}",
            header.format_version
        )));
    }

    // Rebuild the model skeleton and overwrite every tensor from the payload.
    let mut model = Model::build(header.config.clone(), 0).map_err(CliError::from)?;
    if !header.has_gender_head {
        model = model.detach_head(Task::Gender).map_err(CliError::from)?;
    }
    if !header.has_age_head {
        model = model.detach_head(Task::Age).map_err(CliError::from)?;
    }
    if model.params.len() != header.params.len() {
        return Err(fail(format!(
            "parameter list mismatch: checkpoint has {}, config implies {}",
            header.params.len(),
            model.params.len()
        )));
    }

    let mut cursor = 12 + header_len;
    let mut read_array = |len: usize| -> CliResult<Vec<f64>> {
        let end = cursor + len * 8;
        if end > bytes.len() {
            return Err(fail("truncated payload".into()));
        }
        let values = bytes[cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor = end;
        Ok(values)
    };

    for (desc, param) in header.params.iter().zip(model.params.iter_mut()) {
        if desc.name != param.name || desc.shape != param.tensor.shape() {
            return Err(fail(format!(
                "parameter mismatch: checkpoint `{}` {:?} vs config `{}` {:?}",
                desc.name,
                desc.shape,
                param.name,
                param.tensor.shape()
            )));
        }
        if desc.trainable != param.trainable {
            return Err(fail(format!(
                "trainable mask mismatch for `{}`",
                desc.name
            )));
        }
        let values = read_array(param.tensor.len())?;
        param.tensor.values_mut().copy_from_slice(&values);
    }

    let training = match &header.training {
        None => None,
        Some(block) => {
            let mut moments = BTreeMap::new();
            for name in &block.moment_params {
                let idx = model
                    .params
                    .iter()
                    .position(|p| p.name == *name)
                    .ok_or_else(|| fail(format!("moments for unknown parameter `{name}`")))?;
                let n = model.params[idx].tensor.len();
                let m = read_array(n)?;
                let v = read_array(n)?;
                moments.insert(idx, (m, v));
            }
            let state = TrainState {
                step: block.step,
                moments,
            };
            Some((block.clone(), state))
        }
    };
    if cursor != bytes.len() {
        return Err(fail("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        model,
        training,
        provenance: header.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use speechtraits_core::model::{Mode, ModelConfig};
    use speechtraits_core::train::TrainState;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::build(ModelConfig::toy(), 5).unwrap();
        let mut state = TrainState::new(&model);
        state.step = 3;
        for (_, (m, v)) in state.moments.iter_mut() {
            m.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 0.25);
            v.iter_mut().for_each(|x| *x = 0.125);
        }
        let provenance = Provenance {
            version: "0.1.0".into(),
            config_hash: "abc".into(),
            seed: 5,
        };
        save(&path, &model, Some((&state, 2, 0.91)), &provenance).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.model, model);
        let (block, loaded_state) = loaded.training.unwrap();
        assert_eq!(block.epoch, 2);
        assert_eq!(block.dev_score, 0.91);
        assert_eq!(loaded_state, state);
        assert_eq!(loaded.provenance, provenance);

        // Same predictions through the loaded model, bit-exact.
        let wave: Vec<f64> = (0..4000).map(|i| ((i as f64) * 0.05).sin()).collect();
        let a = model.forward(&wave, Mode::Eval, None).unwrap();
        let b = load(&path).unwrap().model.forward(&wave, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn detached_head_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::build(ModelConfig::toy(), 5)
            .unwrap()
            .detach_head(Task::Gender)
            .unwrap();
        save(&path, &model, None, &Provenance::default()).unwrap();
        let loaded = load(&path).unwrap();
        assert!(loaded.model.has_age_head());
        assert!(!loaded.model.has_gender_head());
        assert_eq!(loaded.model, model);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"garbage").unwrap();
        assert!(load(&path).is_err());

        let model = Model::build(ModelConfig::toy(), 5).unwrap();
        save(&path, &model, None, &Provenance::default()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, bytes).unwrap();
        assert!(load(&path).is_err());
    }
}
