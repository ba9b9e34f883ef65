//! Epoch loop: a training phase with gradient updates, a forward-only
//! validation phase, then the step-decay scheduler advances. The parameters
//! from the epoch with the best validation accuracy are kept.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{Tensor, D};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::SplitTensors;
use super::loss::{bce_with_logits, bce_with_logits_mean, sigmoid};
use super::resnet::{BackboneConfig, Classifier};
use super::schedule::{lr_at_epoch, TrainConfig};
use super::sgd::MomentumSgd;
use crate::error::{Error, Result};
use crate::fsutil;

/// Threshold on ŷ used for accuracy-based checkpoint selection.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Best-epoch parameters plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: BTreeMap<String, Tensor>,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub config_fingerprint: String,
}

/// SHA-256 of the JSON form of a value.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    fsutil::sha256_hex(&serde_json::to_vec(value).expect("fingerprinted values serialize"))
}

pub fn train_fingerprint(cfg: &TrainConfig, backbone: &BackboneConfig) -> String {
    fingerprint(&(cfg, backbone))
}

/// Eval-mode logits for every image, in order, using batches of
/// `batch_size`.
pub fn predict_logits(model: &Classifier, images: &Tensor, batch_size: usize) -> Result<Vec<f32>> {
    let n = images.dim(0)?;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = batch_size.min(n - start);
        let logits = model.forward_t(&images.narrow(0, start, len)?, false)?;
        out.extend(logits.squeeze(D::Minus1)?.to_vec1::<f32>()?);
        start += len;
    }
    Ok(out)
}

/// Mean BCE and accuracy (ŷ ≥ 0.5) of a split under the current parameters.
pub fn evaluate_split(
    model: &Classifier,
    data: &SplitTensors,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let logits = predict_logits(model, &data.images, batch_size)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (&z, label) in logits.iter().zip(&data.labels) {
        let y = label.as_f32() as f64;
        loss += bce_with_logits(z as f64, y);
        let predicted = sigmoid(z as f64) >= DECISION_THRESHOLD;
        correct += (predicted == (y == 1.0)) as usize;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains `model` in place and leaves it holding the best checkpoint's
/// parameters. Ties in validation accuracy keep the earliest epoch.
pub fn train(
    model: &Classifier,
    train_data: &SplitTensors,
    val_data: &SplitTensors,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Config(
            "training and validation splits must be nonempty".into(),
        ));
    }
    let mut optimizer = MomentumSgd::new(model.trainable_vars(), cfg.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<u32> = (0..train_data.len() as u32).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    let config_fingerprint = train_fingerprint(cfg, model.config());

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let idx = Tensor::from_slice(chunk, chunk.len(), model.device())?;
            let x = train_data.images.index_select(&idx, 0)?;
            let y = train_data.targets.index_select(&idx, 0)?;
            let logits = model.forward_t(&x, true)?;
            let loss = bce_with_logits_mean(&logits, &y)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            optimizer.step(&loss.backward()?, lr)?;
            loss_sum += value * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_data.len() as f64;
        let (val_loss, val_acc) = evaluate_split(model, val_data, cfg.batch_size)?;
        info!("epoch {epoch}: lr {lr:e} train_loss {train_loss:.4} val_loss {val_loss:.4} val_acc {val_acc:.4}");
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.val_accuracy) {
            best = Some(Checkpoint {
                state: model.state()?,
                epoch,
                val_accuracy: val_acc,
                config_fingerprint: config_fingerprint.clone(),
            });
        }
    }

    let best = best.expect("at least one epoch ran");
    model.restore(&best.state)?;
    Ok((best, history))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in history {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Serde(e.to_string()))?;
    fsutil::write_atomic(path, &bytes)
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

const CHECKPOINT_SCHEMA: u32 = 1;
const WEIGHTS_FILE: &str = "weights.safetensors";

/// On-disk checkpoint metadata; weights live in a sibling safetensors file.
/// `run` carries whatever the caller needs to rebuild inputs (mask, model).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta<R> {
    pub schema_version: u32,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub config_fingerprint: String,
    pub weights_file: String,
    pub weights_sha256: String,
    pub run: R,
}

impl Checkpoint {
    /// Writes `dir/weights.safetensors` then `dir/checkpoint.json`, each via
    /// temp file and rename. Returns the metadata path.
    pub fn save<R: Serialize + Clone>(&self, dir: &Path, run: &R) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let weights = dir.join(WEIGHTS_FILE);
        let tmp = dir.join(format!(".{WEIGHTS_FILE}.tmp"));
        let state: std::collections::HashMap<&str, Tensor> = self
            .state
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        candle_core::safetensors::save(&state, &tmp)?;
        std::fs::rename(&tmp, &weights).map_err(|e| Error::io(&weights, e))?;
        let meta = CheckpointMeta {
            schema_version: CHECKPOINT_SCHEMA,
            epoch: self.epoch,
            val_accuracy: self.val_accuracy,
            config_fingerprint: self.config_fingerprint.clone(),
            weights_file: WEIGHTS_FILE.to_string(),
            weights_sha256: fsutil::sha256_file(&weights)?,
            run: run.clone(),
        };
        let path = dir.join("checkpoint.json");
        fsutil::write_json(&path, &meta)?;
        Ok(path)
    }
}

/// Reads checkpoint metadata and verifies the weight file's digest.
pub fn load_checkpoint<R: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<(CheckpointMeta<R>, PathBuf)> {
    let meta: CheckpointMeta<R> = fsutil::read_json(path)?;
    if meta.schema_version != CHECKPOINT_SCHEMA {
        return Err(Error::Config(format!(
            "unsupported checkpoint schema_version {}",
            meta.schema_version
        )));
    }
    let weights = path
        .parent()
        .unwrap_or(Path::new(""))
        .join(&meta.weights_file);
    let digest = fsutil::sha256_file(&weights)?;
    if digest != meta.weights_sha256 {
        return Err(Error::Config(format!(
            "{} does not match its recorded digest",
            weights.display()
        )));
    }
    Ok((meta, weights))
}
