//! Single-file checkpoints: `GMT1` magic, a little-endian `u32` header
//! length, a JSON header, then every tensor as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{GmtError, Result};
use crate::fusion::GmtModel;
use crate::params::ParamStore;
use crate::training::{AdamW, TrainState};

pub const MAGIC: &[u8; 4] = b"GMT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    epoch: usize,
    step: u64,
    best_ade: Option<f64>,
    best_epoch: Option<usize>,
    epochs_since_best: usize,
    finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    seed: u64,
    progress: Option<Progress>,
    tensors: Vec<TensorEntry>,
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub params: ParamStore,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    /// Rebuild the model with these weights.
    pub fn to_model(&self) -> Result<GmtModel> {
        let mut model = GmtModel::new(self.model.clone())?;
        model.load_params(self.params.clone())?;
        Ok(model)
    }
}

const PARAM: &str = "param";
const ADAM_M: &str = "adam.m";
const ADAM_V: &str = "adam.v";
const BEST: &str = "best";

fn push_store(group: &str, store: &ParamStore, entries: &mut Vec<TensorEntry>, data: &mut Vec<u8>) {
    for (name, v) in store.iter() {
        push_tensor(group, name, v, entries, data);
    }
}

fn push_tensor(group: &str, name: &str, v: &Array2<f64>, entries: &mut Vec<TensorEntry>, data: &mut Vec<u8>) {
    entries.push(TensorEntry {
        group: group.to_string(),
        name: name.to_string(),
        rows: v.nrows(),
        cols: v.ncols(),
    });
    for x in v.iter() {
        data.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serialize a model and, optionally, the training state needed to resume.
pub fn encode(model: &GmtModel, train: Option<&TrainConfig>, state: Option<&TrainState>) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut data = Vec::new();
    push_store(PARAM, &model.params, &mut entries, &mut data);
    let progress = state.map(|s| {
        for (id, name) in model.params.names().iter().enumerate() {
            push_tensor(ADAM_M, name, &s.optimizer.m[id], &mut entries, &mut data);
        }
        for (id, name) in model.params.names().iter().enumerate() {
            push_tensor(ADAM_V, name, &s.optimizer.v[id], &mut entries, &mut data);
        }
        if let Some(best) = &s.best_params {
            push_store(BEST, best, &mut entries, &mut data);
        }
        Progress {
            epoch: s.epoch,
            step: s.optimizer.step,
            best_ade: s.best_ade.is_finite().then_some(s.best_ade),
            best_epoch: s.best_epoch,
            epochs_since_best: s.epochs_since_best,
            finished: s.finished,
        }
    });
    let header = Header {
        format: FORMAT_VERSION,
        model: model.config.clone(),
        train: train.cloned(),
        seed: train.map_or(model.config.init_seed, |t| t.seed),
        progress,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| GmtError::InvalidInput(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| GmtError::InvalidInput("checkpoint header too large".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |m: &str| GmtError::schema(path, m);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (missing GMT1 magic)"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let body = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| GmtError::schema(path, e.to_string()))?;
    if header.format != FORMAT_VERSION {
        return Err(bad("unsupported checkpoint format version"));
    }
    let mut cursor = 8 + len;
    let mut params = ParamStore::default();
    let mut best = ParamStore::default();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for t in &header.tensors {
        let n = t.rows * t.cols;
        let raw = bytes
            .get(cursor..cursor + 8 * n)
            .ok_or_else(|| bad("truncated tensor data"))?;
        cursor += 8 * n;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let arr = Array2::from_shape_vec((t.rows, t.cols), vals).expect("length checked");
        match t.group.as_str() {
            PARAM => {
                params.insert(t.name.clone(), arr);
            }
            BEST => {
                best.insert(t.name.clone(), arr);
            }
            ADAM_M => m.push(arr),
            ADAM_V => v.push(arr),
            _ => return Err(bad("unknown tensor group")),
        }
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let state = match header.progress {
        None => None,
        Some(p) => {
            if m.len() != params.len() || v.len() != params.len() {
                return Err(bad("optimizer state does not cover every parameter"));
            }
            Some(TrainState {
                epoch: p.epoch,
                optimizer: AdamW { step: p.step, m, v },
                best_ade: p.best_ade.unwrap_or(f64::INFINITY),
                best_epoch: p.best_epoch,
                epochs_since_best: p.epochs_since_best,
                best_params: (!best.is_empty()).then_some(best),
                finished: p.finished,
            })
        }
    };
    Ok(Checkpoint {
        model: header.model,
        train: header.train,
        params,
        state,
    })
}

/// Write through a temporary file so a crash never leaves a torn checkpoint.
pub fn save(path: &Path, model: &GmtModel, train: Option<&TrainConfig>, state: Option<&TrainState>) -> Result<()> {
    let bytes = encode(model, train, state)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| GmtError::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| GmtError::io(&tmp, e))?;
    f.sync_all().map_err(|e| GmtError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| GmtError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| GmtError::io(path, e))?;
    decode(&bytes, path)
}
