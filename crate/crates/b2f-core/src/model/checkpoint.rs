use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{RngSnapshot, RngState, Tensor};

use super::{B2fModel, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_tensor(name: String, t: &Tensor) -> NamedTensor {
        NamedTensor {
            name,
            shape: t.shape.clone(),
            data: t.data.clone(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let numel: usize = self.shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::invalid(format!(
                "tensor `{}`: shape {:?} implies {numel} values, got {}",
                self.name,
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
        })
    }
}

/// First/second moment estimates plus the shared step counter of the
/// decoupled-weight-decay Adam optimizer, keyed like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerStateData {
    pub step: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub epochs_completed: usize,
    pub total_epochs: usize,
    pub global_step: u64,
}

/// Versioned training snapshot: config, every named parameter tensor, and
/// (when saved mid-training) optimizer state, RNG position, and progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerStateData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<RngSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<TrainProgress>,
}

impl Checkpoint {
    pub fn from_model(model: &B2fModel) -> Checkpoint {
        let mut params = Vec::new();
        model.visit_params(&mut |name, t| params.push(NamedTensor::from_tensor(name, t)));
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            params,
            optimizer: None,
            rng: None,
            progress: None,
        }
    }

    /// Rebuild the model, validating that the stored tensors exactly cover
    /// the parameter set the config implies (no missing, extra, or
    /// wrong-shape entries).
    pub fn build_model(&self) -> Result<B2fModel> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        let mut stored: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
        for p in &self.params {
            if stored.insert(p.name.as_str(), p).is_some() {
                return Err(Error::invalid(format!("duplicate parameter `{}`", p.name)));
            }
        }
        let mut model = B2fModel::new(self.config.clone(), &mut RngState::new(0))?;
        let mut missing = Vec::new();
        let mut failure = None;
        model.visit_params_mut(&mut |name, t| {
            match stored.remove(name.as_str()) {
                None => missing.push(name),
                Some(p) => {
                    if p.shape != t.shape {
                        failure.get_or_insert(format!(
                            "parameter `{name}`: checkpoint shape {:?} does not match config shape {:?}",
                            p.shape, t.shape
                        ));
                    } else {
                        match p.to_tensor() {
                            Ok(tensor) => *t = tensor,
                            Err(e) => {
                                failure.get_or_insert(e.to_string());
                            }
                        }
                    }
                }
            }
        });
        if let Some(msg) = failure {
            return Err(Error::invalid(msg));
        }
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "checkpoint is missing {} parameter(s), first: `{}`",
                missing.len(),
                missing[0]
            )));
        }
        if let Some((name, _)) = stored.into_iter().next() {
            return Err(Error::invalid(format!(
                "checkpoint has parameter `{name}` that the config does not define"
            )));
        }
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(ckpt)
        .map_err(|e| Error::invalid(format!("checkpoint serialization failed: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            "checkpoint",
            e.line(),
            format!("{}: {e}", path.display()),
        )
    })
}
