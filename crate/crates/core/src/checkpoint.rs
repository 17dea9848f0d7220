//! Checkpoint directories: `manifest.json` (model config, seed, per-parameter
//! name/shape/offset), `params.bin` (little-endian f32 blob) and
//! `vocab.json` (word/tag vocabularies and relation names).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("{path}: parameter `{name}` needs bytes {start}..{end}, blob has {len}")]
    Truncated {
        path: PathBuf,
        name: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("checkpoint {path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub seed: u64,
    /// Per-token input width (d_in) implied by `model`.
    pub input_dim: usize,
    pub params: Vec<ParamEntry>,
    /// Free-form run settings needed to featurize new data.
    #[serde(default)]
    pub settings: serde_json::Value,
}

/// Vocabularies a checkpoint was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: Vocabulary,
    pub pos: Vocabulary,
    pub ner: Vocabulary,
    pub relations: Vec<String>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the model (cast to f32) into `dir`, creating it if needed.
pub fn save<T: Scalar>(
    dir: &Path,
    model: &Model<T>,
    seed: u64,
    settings: serde_json::Value,
) -> Result<Manifest, CheckpointError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut params = Vec::new();
    let mut blob = Vec::with_capacity(model.params().num_elements() * 4);
    let mut offset = 0;
    for (_, name, tensor) in model.params().iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += tensor.numel();
        for v in tensor.data() {
            blob.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: model.config().clone(),
        seed,
        input_dim: model.config().input_dim(),
        params,
        settings,
    };
    let blob_path = dir.join(PARAMS_FILE);
    fs::write(&blob_path, &blob).map_err(io(&blob_path))?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a checkpoint and checks every parameter against the shapes its
/// config implies.
pub fn load(dir: &Path) -> Result<(Manifest, Model<f32>), CheckpointError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version(manifest.format_version));
    }
    let blob_path = dir.join(PARAMS_FILE);
    let blob = fs::read(&blob_path).map_err(io(&blob_path))?;
    let model_err = |source| CheckpointError::Model {
        path: dir.to_path_buf(),
        source,
    };
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let (start, end) = (entry.offset * 4, (entry.offset + n) * 4);
        let bytes = blob.get(start..end).ok_or_else(|| CheckpointError::Truncated {
            path: blob_path.clone(),
            name: entry.name.clone(),
            start,
            end,
            len: blob.len(),
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), data).map_err(|e| model_err(e.into()))?;
        store
            .insert(entry.name.clone(), tensor.with_grad(true))
            .map_err(|e| model_err(e.into()))?;
    }
    let model = Model::from_params(manifest.model.clone(), store).map_err(model_err)?;
    Ok((manifest, model))
}

pub fn save_vocab(dir: &Path, vocab: &Vocabularies) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_json(&dir.join(VOCAB_FILE), vocab)
}

pub fn load_vocab(dir: &Path) -> Result<Vocabularies, CheckpointError> {
    read_json(&dir.join(VOCAB_FILE))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CheckpointError> {
    let text = serde_json::to_string_pretty(value).map_err(json(path))?;
    fs::write(path, text + "\n").map_err(io(path))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, CheckpointError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(json(path))
}
