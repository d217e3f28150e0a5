use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::datacube::{NormalizationStats, SampleLayout};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TeleVit};
use crate::nn::Parameters;

const FORMAT: &str = "televit-checkpoint-v1";

/// Trained parameters plus everything needed to reuse them.
///
/// Stored as a safetensors file: every parameter as a named f64 tensor,
/// with the configs, epoch, validation loss, normalization statistics and
/// fingerprints in the metadata header.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TeleVit,
    pub train_config: TrainConfig,
    /// 1-based epoch the parameters come from.
    pub epoch: usize,
    pub val_loss: f64,
    pub stats: Option<NormalizationStats>,
    pub layout: Option<SampleLayout>,
    pub data_fingerprint: String,
    pub stats_fingerprint: String,
}

/// Hex SHA-256 of a serializable value's JSON form.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    format!("{:x}", Sha256::digest(bytes))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes")
}

fn from_meta<T: DeserializeOwned>(
    meta: &HashMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    let raw = meta
        .get(key)
        .ok_or_else(|| Error::format(path, format!("checkpoint metadata lacks {key}")))?;
    serde_json::from_str(raw).map_err(|e| Error::format(path, format!("bad {key}: {e}")))
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut names = Vec::new();
        let mut buffers: Vec<(Vec<usize>, Vec<u8>)> = Vec::new();
        self.model.visit("", &mut |name, a| {
            let bytes: Vec<u8> = a.iter().flat_map(|v| v.to_le_bytes()).collect();
            names.push(name);
            buffers.push((a.shape().to_vec(), bytes));
        });
        let views = names
            .iter()
            .zip(&buffers)
            .map(|(n, (shape, bytes))| {
                TensorView::new(Dtype::F64, shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::format(path, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert("model_config".to_string(), to_json(&self.model.config));
        meta.insert("train_config".to_string(), to_json(&self.train_config));
        meta.insert("epoch".to_string(), self.epoch.to_string());
        meta.insert("val_loss".to_string(), to_json(&self.val_loss));
        meta.insert("stats".to_string(), to_json(&self.stats));
        meta.insert("layout".to_string(), to_json(&self.layout));
        meta.insert(
            "data_fingerprint".to_string(),
            to_json(&self.data_fingerprint),
        );
        meta.insert(
            "stats_fingerprint".to_string(),
            to_json(&self.stats_fingerprint),
        );
        let bytes = safetensors::serialize(views, &Some(meta))
            .map_err(|e| Error::format(path, e.to_string()))?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) =
            SafeTensors::read_metadata(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| Error::format(path, "checkpoint has no metadata"))?;
        if meta.get("format").map(String::as_str) != Some(FORMAT) {
            return Err(Error::format(path, "not a televit checkpoint"));
        }
        let config: ModelConfig = from_meta(&meta, "model_config", path)?;
        let tensors =
            SafeTensors::deserialize(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        let mut model = TeleVit::new(config, 0)?;
        let mut failure = None;
        model.visit_mut("", &mut |name, mut a| {
            if failure.is_some() {
                return;
            }
            let t = match tensors.tensor(&name) {
                Ok(t) => t,
                Err(_) => {
                    failure = Some(format!("tensor {name} missing"));
                    return;
                }
            };
            if t.dtype() != Dtype::F64 || t.shape() != a.shape() {
                failure = Some(format!(
                    "tensor {name} is {:?} {:?}, expected F64 {:?}",
                    t.dtype(),
                    t.shape(),
                    a.shape()
                ));
                return;
            }
            for (dst, chunk) in a.iter_mut().zip(t.data().chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        });
        if let Some(msg) = failure {
            return Err(Error::format(path, msg));
        }
        Ok(Checkpoint {
            model,
            train_config: from_meta(&meta, "train_config", path)?,
            epoch: from_meta(&meta, "epoch", path)?,
            val_loss: from_meta(&meta, "val_loss", path)?,
            stats: from_meta(&meta, "stats", path)?,
            layout: from_meta(&meta, "layout", path)?,
            data_fingerprint: from_meta(&meta, "data_fingerprint", path)?,
            stats_fingerprint: from_meta(&meta, "stats_fingerprint", path)?,
        })
    }
}
