//! One grid cell: mask, train, checkpoint, evaluate on val and test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{score_split, write_scores, EvalReport};
use crate::fsutil;
use crate::ingest::{AlignedImage, DatasetManifest, Split};
use crate::model::{
    build_model, fingerprint, load_checkpoint, stack_images, train, write_history, BackboneConfig,
    CheckpointMeta, Classifier, SplitTensors, TrainConfig, WeightSource,
};
use crate::roi::{build_mask, Mask, PatchConfig, RoiSpec, Scale};

/// Everything that determines a cell's results. Hashing it gives the cell
/// fingerprint used for resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config: PatchConfig,
    /// `None` for FULL_FACE, whose mask does not depend on scale.
    pub scale: Option<Scale>,
    pub roi_spec: RoiSpec,
    pub backbone: BackboneConfig,
    /// Training settings with the cell's own seed.
    pub train: TrainConfig,
    pub weights: WeightSource,
    pub weights_sha256: Option<String>,
    pub manifest_fingerprint: String,
}

impl RunInfo {
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }

    pub fn mask(&self) -> Mask {
        build_mask(
            &self.roi_spec,
            &self.config,
            self.scale.unwrap_or(Scale::Large),
        )
    }
}

/// Per-cell seed derived from the global seed, configuration and scale.
pub fn cell_seed(global: u64, config: &PatchConfig, scale: Option<Scale>) -> u64 {
    let scale = scale.map(Scale::as_str).unwrap_or("all");
    let digest = Sha256::digest(format!("{global}/{}/{scale}", config.name()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

pub fn scale_dir_name(scale: Option<Scale>) -> &'static str {
    scale.map(Scale::as_str).unwrap_or("all")
}

/// Decoded images of one manifest, grouped by split, shared across cells.
pub struct LoadedDataset {
    pub fingerprint: String,
    splits: BTreeMap<Split, Vec<AlignedImage>>,
}

impl LoadedDataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        use rayon::prelude::*;
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let entries: Vec<_> = manifest.split(split).collect();
            let images = entries
                .par_iter()
                .map(|e| AlignedImage::load(e))
                .collect::<Result<Vec<_>>>()?;
            splits.insert(split, images);
        }
        Ok(LoadedDataset {
            fingerprint: manifest.fingerprint()?,
            splits,
        })
    }

    pub fn images(&self, split: Split) -> &[AlignedImage] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tensors(&self, split: Split, mask: &Mask, info: &RunInfo) -> Result<SplitTensors> {
        let images = self.images(split);
        if images.is_empty() {
            return Err(Error::Config(format!("split '{split}' is empty")));
        }
        stack_images(images, mask, &info.train.normalization, &Device::Cpu)
    }
}

/// Files a finished cell leaves behind, relative to the cell directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const VAL_REPORT_FILE: &str = "report_val.json";
pub const TEST_REPORT_FILE: &str = "report_test.json";

#[derive(Debug, Clone)]
pub struct CellResult {
    pub checkpoint_path: PathBuf,
    pub val: EvalReport,
    pub test: Option<EvalReport>,
}

fn evaluate_into(
    model: &Classifier,
    data: &SplitTensors,
    info: &RunInfo,
    split: Split,
    dir: &Path,
    report_file: &str,
) -> Result<EvalReport> {
    let scored = score_split(model, data, info.train.batch_size)?;
    write_scores(&dir.join(format!("scores_{split}.csv")), &scored)?;
    let report = EvalReport::from_scores(info.config.name(), info.scale, split, &scored)?;
    report.save(&dir.join(report_file))?;
    Ok(report)
}

/// Trains and evaluates one cell, writing all artifacts into `dir`.
/// Evaluates on test only when the dataset has a test split.
pub fn run_cell(data: &LoadedDataset, info: &RunInfo, dir: &Path) -> Result<CellResult> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mask = info.mask();
    let train_data = data.tensors(Split::Train, &mask, info)?;
    let val_data = data.tensors(Split::Val, &mask, info)?;

    let model = build_model(&info.backbone, &info.weights, info.train.seed)?;
    let (best, history) = train(&model, &train_data, &val_data, &info.train)?;
    write_history(&dir.join(HISTORY_FILE), &history)?;
    let checkpoint_path = best.save(dir, info)?;

    let val = evaluate_into(&model, &val_data, info, Split::Val, dir, VAL_REPORT_FILE)?;
    let test = if data.images(Split::Test).is_empty() {
        None
    } else {
        let test_data = data.tensors(Split::Test, &mask, info)?;
        Some(evaluate_into(
            &model,
            &test_data,
            info,
            Split::Test,
            dir,
            TEST_REPORT_FILE,
        )?)
    };
    Ok(CellResult {
        checkpoint_path,
        val,
        test,
    })
}

/// Rebuilds the model stored in a checkpoint written by [`run_cell`].
pub fn restore_checkpoint(path: &Path) -> Result<(CheckpointMeta<RunInfo>, Classifier)> {
    let (meta, weights) = load_checkpoint::<RunInfo>(path)?;
    let model = build_model(&meta.run.backbone, &WeightSource::Random, 0)?;
    model.load_weights(&weights)?;
    Ok((meta, model))
}

/// Hash of a pretrained weight file, recorded so swapping weights
/// invalidates resume.
pub fn weights_digest(weights: &WeightSource) -> Result<Option<String>> {
    match weights {
        WeightSource::Random => Ok(None),
        WeightSource::Pretrained { path } => {
            if !path.is_file() {
                return Err(Error::WeightsUnavailable(format!(
                    "no weight file at {}",
                    path.display()
                )));
            }
            Ok(Some(fsutil::sha256_file(path)?))
        }
    }
}
