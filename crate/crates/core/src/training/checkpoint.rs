//! Checkpoints and the post-TSG text cache, stored in the archive container.
//!
//! A checkpoint holds the full model under `param/`, the Adam moments under
//! `adam_m/` and `adam_v/`, and optionally the text cache. All run
//! randomness is derived from `(seed, stage, epoch, index)`, so the seed and
//! epoch counter are the complete generator state.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use crate::error::{Error, Result};
use crate::model::archive;
use crate::model::params::Tensor;
use crate::model::{Stage, ThreeStreamModel};

pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const TEXT_CACHE_KIND: &str = "text_cache";
const PARAM: &str = "param/";
const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";
const CACHE: &str = "text_cache";

/// Normalised text features of every identity, `N x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCache {
    pub features: Array2<f64>,
}

impl TextCache {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut t = BTreeMap::new();
        t.insert(CACHE.to_string(), self.features.clone().into_dyn());
        archive::write(path, TEXT_CACHE_KIND, &serde_json::Value::Null, &t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = archive::read(path)?;
        if c.kind != TEXT_CACHE_KIND {
            return Err(Error::Load(format!("{}: not a text cache", path.display())));
        }
        let f = c
            .tensors
            .remove(CACHE)
            .ok_or_else(|| Error::Load(format!("{}: text cache tensor missing", path.display())))?;
        Ok(Self {
            features: f
                .into_dimensionality()
                .map_err(|_| Error::Load(format!("{}: text cache is not a matrix", path.display())))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub stage: Stage,
    /// Epochs of `stage` already completed.
    pub epochs_done: usize,
    pub stage_epochs: usize,
    pub model: ThreeStreamModel,
    pub optimizer: AdamState,
    pub seed: u64,
    pub config_hash: String,
    pub text_cache: Option<TextCache>,
}

impl CheckpointRecord {
    pub fn is_complete(&self) -> bool {
        self.epochs_done >= self.stage_epochs
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    model: serde_json::Value,
    stage: Stage,
    epochs_done: usize,
    stage_epochs: usize,
    optimizer_step: u64,
    seed: u64,
    config_hash: String,
}

pub fn checkpoint_save(record: &CheckpointRecord, path: &Path) -> Result<()> {
    let (model_meta, params) = record.model.to_parts();
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (k, v) in params {
        tensors.insert(format!("{PARAM}{k}"), v);
    }
    for (k, v) in &record.optimizer.m {
        tensors.insert(format!("{ADAM_M}{k}"), v.clone());
    }
    for (k, v) in &record.optimizer.v {
        tensors.insert(format!("{ADAM_V}{k}"), v.clone());
    }
    if let Some(c) = &record.text_cache {
        tensors.insert(CACHE.to_string(), c.features.clone().into_dyn());
    }
    let meta = Meta {
        model: model_meta,
        stage: record.stage,
        epochs_done: record.epochs_done,
        stage_epochs: record.stage_epochs,
        optimizer_step: record.optimizer.step,
        seed: record.seed,
        config_hash: record.config_hash.clone(),
    };
    archive::write(
        path,
        CHECKPOINT_KIND,
        &serde_json::to_value(meta).expect("metadata serializes"),
        &tensors,
    )
}

/// Loads a checkpoint; with `expected_hash` set, a checkpoint written under
/// a different configuration is rejected.
pub fn checkpoint_load(path: &Path, expected_hash: Option<&str>) -> Result<CheckpointRecord> {
    let c = archive::read(path)?;
    if c.kind != CHECKPOINT_KIND {
        return Err(Error::Load(format!(
            "{}: expected a {CHECKPOINT_KIND} archive, found {:?}",
            path.display(),
            c.kind
        )));
    }
    let meta: Meta = serde_json::from_value(c.metadata)
        .map_err(|e| Error::Load(format!("{}: bad checkpoint metadata: {e}", path.display())))?;
    if let Some(want) = expected_hash {
        if want != meta.config_hash {
            return Err(Error::Load(format!(
                "{}: checkpoint was written with config {} but the current config hashes to {want}",
                path.display(),
                meta.config_hash
            )));
        }
    }
    let mut params = BTreeMap::new();
    let mut optimizer = AdamState {
        step: meta.optimizer_step,
        ..AdamState::default()
    };
    let mut text_cache = None;
    for (k, v) in c.tensors {
        if let Some(p) = k.strip_prefix(PARAM) {
            params.insert(p.to_string(), v);
        } else if let Some(p) = k.strip_prefix(ADAM_M) {
            optimizer.m.insert(p.to_string(), v);
        } else if let Some(p) = k.strip_prefix(ADAM_V) {
            optimizer.v.insert(p.to_string(), v);
        } else if k == CACHE {
            text_cache = Some(TextCache {
                features: v
                    .into_dimensionality()
                    .map_err(|_| Error::Load(format!("{}: text cache is not a matrix", path.display())))?,
            });
        } else {
            return Err(Error::Load(format!("{}: unexpected tensor {k}", path.display())));
        }
    }
    let model = ThreeStreamModel::from_parts(path, meta.model, params)?;
    Ok(CheckpointRecord {
        stage: meta.stage,
        epochs_done: meta.epochs_done,
        stage_epochs: meta.stage_epochs,
        model,
        optimizer,
        seed: meta.seed,
        config_hash: meta.config_hash,
        text_cache,
    })
}
