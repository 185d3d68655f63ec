//! Named-tensor checkpoints on disk: single containers, sharded checkpoints
//! with a weight-map index, and the model config document.

mod container;
mod dtype;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use container::{read_container, write_container, Container, NamedTensor};
pub use dtype::{decode_row, encode_row, Dtype};

use crate::error::{ContainerError, Error, Result};

pub const SINGLE_FILE: &str = "model.safetensors";
pub const INDEX_FILE: &str = "model.safetensors.index.json";
pub const CONFIG_FILE: &str = "config.json";

/// Explicit output-head tensor names, in search order.
pub const HEAD_CANDIDATES: &[&str] = &["lm_head.weight", "output.weight", "embed_out.weight"];
/// Input-embedding tensor names used when the head is tied.
pub const EMBEDDING_CANDIDATES: &[&str] = &[
    "model.embed_tokens.weight",
    "embed_tokens.weight",
    "transformer.wte.weight",
    "tok_embeddings.weight",
    "gpt_neox.embed_in.weight",
];

/// Tensor name → shard file, from `model.safetensors.index.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardIndex {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
    pub weight_map: BTreeMap<String, String>,
}

impl ShardIndex {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Distinct shard file names, sorted.
    pub fn shard_files(&self) -> Vec<String> {
        self.weight_map
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Read-mostly view of a model's `config.json`. Unknown fields are kept verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    raw: Value,
}

impl ModelConfig {
    pub fn from_value(raw: Value) -> Self {
        ModelConfig { raw }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if !raw.is_object() {
            return Err(Error::Validation(format!(
                "{}: config is not a JSON object",
                path.display()
            )));
        }
        Ok(ModelConfig { raw })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.raw).expect("config serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn lookup(&self, key: &str) -> Option<&Value> {
        // multimodal configs nest the language model under text_config
        self.raw
            .get(key)
            .or_else(|| self.raw.get("text_config").and_then(|t| t.get(key)))
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.lookup("vocab_size")
            .and_then(Value::as_u64)
            .map(|v| v as usize)
    }

    pub fn tie_word_embeddings(&self) -> bool {
        self.lookup("tie_word_embeddings")
            .and_then(Value::as_bool)
            .unwrap_or(false)
    }

    pub fn set_tie_word_embeddings(&mut self, tied: bool) {
        if let Some(obj) = self.raw.as_object_mut() {
            obj.insert("tie_word_embeddings".into(), Value::Bool(tied));
        }
        if let Some(text) = self
            .raw
            .get_mut("text_config")
            .and_then(Value::as_object_mut)
        {
            if text.contains_key("tie_word_embeddings") {
                text.insert("tie_word_embeddings".into(), Value::Bool(tied));
            }
        }
    }

    pub fn as_value(&self) -> &Value {
        &self.raw
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    Single,
    Sharded(ShardIndex),
}

/// A checkpoint directory: config plus either one container or a shard index.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    dir: PathBuf,
    layout: Layout,
    tensor_files: BTreeMap<String, String>,
}

/// Name, dtype string and shape of one tensor, as declared in a container header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

/// Reads only the header of a container, not its data region.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<TensorMeta>> {
    use std::io::Read;

    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let container_err = |source| Error::Container {
        path: path.to_path_buf(),
        source,
    };
    let mut prefix = [0u8; 8];
    file.read_exact(&mut prefix)
        .map_err(|_| container_err(ContainerError::MissingHeaderLength))?;
    let header_len = u64::from_le_bytes(prefix);
    if header_len > file_len - 8 {
        return Err(container_err(ContainerError::HeaderOverrun {
            header_len,
            available: file_len - 8,
        }));
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    let map: serde_json::Map<String, Value> = serde_json::from_slice(&header)
        .map_err(|e| container_err(ContainerError::InvalidHeader(e.to_string())))?;
    map.into_iter()
        .filter(|(k, _)| k != "__metadata__")
        .map(|(name, v)| {
            let dtype = v.get("dtype").and_then(Value::as_str).map(str::to_string);
            let shape: Option<Vec<usize>> = v
                .get("shape")
                .and_then(|s| serde_json::from_value(s.clone()).ok());
            match (dtype, shape) {
                (Some(dtype), Some(shape)) => Ok(TensorMeta { name, dtype, shape }),
                _ => Err(container_err(ContainerError::InvalidHeader(format!(
                    "tensor {name:?}: missing dtype or shape"
                )))),
            }
        })
        .collect()
}

impl Checkpoint {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let index_path = dir.join(INDEX_FILE);
        let single_path = dir.join(SINGLE_FILE);
        if index_path.is_file() {
            let index = ShardIndex::load(&index_path)?;
            for file in index.shard_files() {
                if !dir.join(&file).is_file() {
                    return Err(Error::Validation(format!(
                        "shard {file:?} listed in {INDEX_FILE} is missing from {}",
                        dir.display()
                    )));
                }
            }
            Ok(Checkpoint {
                tensor_files: index.weight_map.clone(),
                layout: Layout::Sharded(index),
                dir,
            })
        } else if single_path.is_file() {
            let tensor_files = read_header(&single_path)?
                .into_iter()
                .map(|m| (m.name, SINGLE_FILE.to_string()))
                .collect();
            Ok(Checkpoint {
                dir,
                layout: Layout::Single,
                tensor_files,
            })
        } else {
            Err(Error::Validation(format!(
                "{} contains neither {SINGLE_FILE} nor {INDEX_FILE}",
                dir.display()
            )))
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensor_files.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensor_files.contains_key(name)
    }

    /// File name (relative to the directory) holding `name`.
    pub fn file_for(&self, name: &str) -> Option<&str> {
        self.tensor_files.get(name).map(String::as_str)
    }

    /// All container file names, sorted.
    pub fn container_files(&self) -> Vec<String> {
        self.tensor_files
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Declared dtype and shape of `name`, read from its container header.
    pub fn tensor_meta(&self, name: &str) -> Result<TensorMeta> {
        let file = self
            .file_for(name)
            .ok_or_else(|| Error::Validation(format!("tensor {name:?} not found in checkpoint")))?;
        read_header(self.dir.join(file))?
            .into_iter()
            .find(|m| m.name == name)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "index maps {name:?} to {file}, but the shard does not contain it"
                ))
            })
    }

    pub fn read_tensor(&self, name: &str) -> Result<NamedTensor> {
        let file = self
            .file_for(name)
            .ok_or_else(|| Error::Validation(format!("tensor {name:?} not found in checkpoint")))?;
        let path = self.dir.join(file);
        let mut container = read_container(&path)?;
        let pos = container
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "index maps {name:?} to {file}, but the shard does not contain it"
                ))
            })?;
        Ok(container.tensors.swap_remove(pos))
    }

    /// Every tensor in the checkpoint, shard by shard.
    pub fn read_all(&self) -> Result<BTreeMap<String, NamedTensor>> {
        let mut out = BTreeMap::new();
        for file in self.container_files() {
            for t in read_container(self.dir.join(&file))?.tensors {
                out.insert(t.name.clone(), t);
            }
        }
        Ok(out)
    }
}

/// Where the output-projection matrix lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLocation {
    pub tensor: String,
    pub shard_file: String,
    /// The head shares storage with the input embedding.
    pub tied: bool,
}

pub fn resolve_head_tensor(
    model_dir: impl AsRef<Path>,
    config: &ModelConfig,
) -> Result<HeadLocation> {
    let checkpoint = match Checkpoint::open(model_dir.as_ref()) {
        Ok(c) => c,
        // no container at all: nothing to search
        Err(Error::Validation(_)) => {
            return Err(Error::HeadNotFound {
                searched: HEAD_CANDIDATES
                    .iter()
                    .chain(EMBEDDING_CANDIDATES)
                    .map(|s| s.to_string())
                    .collect(),
            })
        }
        Err(e) => return Err(e),
    };
    resolve_in(&checkpoint, config)
}

pub fn resolve_in(checkpoint: &Checkpoint, config: &ModelConfig) -> Result<HeadLocation> {
    let tied = config.tie_word_embeddings();
    // a tied model reads its head from the embedding, whatever else the file holds
    let candidates: &[&str] = if tied {
        EMBEDDING_CANDIDATES
    } else {
        HEAD_CANDIDATES
    };
    for name in candidates {
        if let Some(file) = checkpoint.file_for(name) {
            return Ok(HeadLocation {
                tensor: name.to_string(),
                shard_file: file.to_string(),
                tied,
            });
        }
    }
    Err(Error::HeadNotFound {
        searched: candidates.iter().map(|s| s.to_string()).collect(),
    })
}

/// Loads `config.json` from a model directory.
pub fn load_model_config(model_dir: impl AsRef<Path>) -> Result<ModelConfig> {
    ModelConfig::load(model_dir.as_ref().join(CONFIG_FILE))
}
