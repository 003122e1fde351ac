//! Single-file checkpoints.
//!
//! Layout: the magic `RELROTCK`, a little-endian `u32` format version, a
//! `u64` header length, the JSON header, every tensor as little-endian `f32`
//! in header order, and finally the SHA-256 of all preceding bytes. Nothing
//! in the file depends on the clock or on target labels.

use std::path::Path;

use relrot_core::model::{ModelBundle, ModelSpec};
use relrot_core::nn::Module;
use relrot_core::train::{Sgd, TrainConfig, Trainer};
use relrot_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

const MAGIC: &[u8; 8] = b"RELROTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    classes: Vec<String>,
    input_size: usize,
    epoch: usize,
    params: Vec<TensorEntry>,
    velocity: Vec<TensorEntry>,
}

/// Everything needed to evaluate a model or continue its training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub classes: Vec<String>,
    pub input_size: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub model: ModelBundle<f32>,
    pub velocity: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, classes: &[String]) -> Self {
        Checkpoint {
            config: t.config.clone(),
            classes: classes.to_vec(),
            input_size: t.model.spec.input_size,
            epoch: t.epoch,
            model: t.model.clone(),
            velocity: t.optimizer.velocity().to_vec(),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        self.config.model_spec(self.classes.len(), self.input_size)
    }

    /// Trainer that continues after the saved epoch under `config`, which
    /// may change optimisation settings but not the architecture.
    pub fn into_trainer(self, config: TrainConfig) -> Result<Trainer> {
        check_compatible(&self.spec(), &config.model_spec(self.classes.len(), self.input_size))?;
        config.validate().map_err(AppError::config)?;
        let mut opt = Sgd::new(0.0, 0.0, 0.0, true);
        opt.set_velocity(&self.model, self.velocity).map_err(|e| AppError::Data(e.to_string()))?;
        Ok(Trainer::resume(config, self.model, opt, self.epoch))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = |items: Vec<(String, &Tensor<f32>)>| -> Vec<TensorEntry> {
            items
                .into_iter()
                .map(|(name, t)| TensorEntry {
                    name,
                    shape: t.shape().to_vec(),
                })
                .collect()
        };
        let params: Vec<(String, &Tensor<f32>)> = self.model.named_params().into_iter().map(|(n, p)| (n, &p.value)).collect();
        let velocity: Vec<(String, &Tensor<f32>)> = self.velocity.iter().map(|(n, t)| (n.clone(), t)).collect();
        let header = Header {
            config: self.config.clone(),
            classes: self.classes.clone(),
            input_size: self.input_size,
            epoch: self.epoch,
            params: entries(params.clone()),
            velocity: entries(velocity.clone()),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in params.iter().chain(&velocity) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| AppError::Data(format!("corrupt checkpoint: {what}"));
        if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let json = body.get(20..20 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&format!("header: {e}")))?;
        let mut data = &body[20 + hlen..];
        let mut take = |e: &TensorEntry| -> Result<Tensor<f32>> {
            let n: usize = e.shape.iter().product();
            if data.len() < 4 * n {
                return Err(corrupt("truncated tensor data"));
            }
            let (head, rest) = data.split_at(4 * n);
            data = rest;
            let vals = head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(&e.shape, vals).map_err(|err| corrupt(&err.to_string()))
        };
        let params: Vec<(String, Tensor<f32>)> =
            header.params.iter().map(|e| Ok((e.name.clone(), take(e)?))).collect::<Result<_>>()?;
        let velocity: Vec<(String, Tensor<f32>)> =
            header.velocity.iter().map(|e| Ok((e.name.clone(), take(e)?))).collect::<Result<_>>()?;
        if !data.is_empty() {
            return Err(corrupt("trailing bytes"));
        }

        let spec = header.config.model_spec(header.classes.len(), header.input_size);
        let mut model = ModelBundle::<f32>::new(spec, header.config.seed).map_err(AppError::config)?;
        let mut slots = model.named_params_mut();
        let expected: Vec<&str> = slots.iter().map(|(n, _)| n.as_str()).collect();
        let found: Vec<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
        if expected != found {
            let missing: Vec<&&str> = expected.iter().filter(|n| !found.contains(n)).collect();
            let extra: Vec<&&str> = found.iter().filter(|n| !expected.contains(n)).collect();
            return Err(AppError::Config(format!(
                "checkpoint key set does not match its configuration; missing {missing:?}, unexpected {extra:?}"
            )));
        }
        for ((name, slot), (_, value)) in slots.iter_mut().zip(params) {
            if slot.value.shape() != value.shape() {
                return Err(AppError::Config(format!(
                    "{name}: stored shape {:?}, configuration needs {:?}",
                    value.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = value;
        }
        drop(slots);
        Ok(Checkpoint {
            config: header.config,
            classes: header.classes,
            input_size: header.input_size,
            epoch: header.epoch,
            model,
            velocity,
        })
    }
}

/// Refuse to pair weights with a configuration that builds another network.
pub fn check_compatible(stored: &ModelSpec, wanted: &ModelSpec) -> Result<()> {
    if stored == wanted {
        return Ok(());
    }
    let mut diffs = Vec::new();
    if stored.backbone != wanted.backbone {
        diffs.push("backbone");
    }
    if stored.classes != wanted.classes {
        diffs.push("classes");
    }
    if stored.input_size != wanted.input_size {
        diffs.push("input-size");
    }
    if stored.main_hidden != wanted.main_hidden {
        diffs.push("main-hidden");
    }
    if stored.pretext_width != wanted.pretext_width {
        diffs.push("pretext-width");
    }
    if stored.pretext_head != wanted.pretext_head {
        diffs.push("pretext-head");
    }
    if stored.pretext_input != wanted.pretext_input {
        diffs.push("pretext input (method)");
    }
    if stored.dropout != wanted.dropout {
        diffs.push("dropout");
    }
    if stored.domain_hidden != wanted.domain_hidden {
        diffs.push("domain discriminator (method)");
    }
    Err(AppError::Config(format!("checkpoint is incompatible with the configuration: {} differ", diffs.join(", "))))
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    // write then rename, so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, ck.to_bytes()).map_err(|e| AppError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        AppError::Data(m) => AppError::Data(format!("{}: {m}", path.display())),
        AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Load a checkpoint and require that `config` builds the same network.
pub fn load_checkpoint_into(path: &Path, config: &TrainConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    check_compatible(&ck.spec(), &config.model_spec(ck.classes.len(), ck.input_size))?;
    Ok(ck)
}
