//! Experiment grid: every (patch configuration, scale) cell trained and
//! evaluated from one config file, with resumable per-cell artifacts under
//! `out_root/<config>/<scale>/` and a summary written last.
//!
//! FULL_FACE does not depend on scale, so it is a single cell
//! (`out_root/FULL_FACE/all/`).

mod cell;
mod summary;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::ingest::{DatasetManifest, ManifestKind};
use crate::model::{BackboneConfig, TrainConfig, WeightSource};
use crate::roi::{enumerate_configs, resolve_config, PatchConfig, RoiSpec, Scale};

pub use cell::{
    cell_seed, restore_checkpoint, run_cell, scale_dir_name, weights_digest, CellResult,
    LoadedDataset, RunInfo, CHECKPOINT_FILE, HISTORY_FILE, TEST_REPORT_FILE, VAL_REPORT_FILE,
};
pub use summary::{rank_summary, CellStatus, GridSummary, RankMetric, SummaryRow};

const CELL_STATUS_FILE: &str = "cell.json";

fn default_configs() -> Vec<String> {
    enumerate_configs().iter().map(PatchConfig::name).collect()
}

fn default_scales() -> Vec<Scale> {
    Scale::ALL.to_vec()
}

fn default_workers() -> usize {
    1
}

/// Grid configuration file (TOML or JSON). Relative paths resolve against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub manifest: PathBuf,
    /// ROI rectangle file; the shipped default when absent.
    #[serde(default)]
    pub roi_spec: Option<PathBuf>,
    #[serde(default = "default_configs")]
    pub configs: Vec<String>,
    #[serde(default = "default_scales")]
    pub scales: Vec<Scale>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    pub weights: WeightSource,
    pub out_root: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: GridSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)?,
            _ => serde_json::from_str(&text)?,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut spec.manifest);
        resolve(&mut spec.out_root);
        if let Some(p) = spec.roi_spec.as_mut() {
            resolve(p);
        }
        if let WeightSource::Pretrained { path } = &mut spec.weights {
            resolve(path);
        }
        Ok(spec)
    }

    /// Expanded cells in grid order, FULL_FACE collapsed to one cell.
    pub fn cells(&self) -> Result<Vec<(PatchConfig, Option<Scale>)>> {
        if self.scales.is_empty() {
            return Err(Error::Config("grid needs at least one scale".into()));
        }
        let mut cells = Vec::new();
        for name in &self.configs {
            let config = resolve_config(name)?;
            if config.is_full_face() {
                cells.push((config, None));
            } else {
                cells.extend(self.scales.iter().map(|&s| (config, Some(s))));
            }
        }
        let mut seen = std::collections::HashSet::new();
        cells.retain(|c| seen.insert(*c));
        Ok(cells)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.backbone.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.cells().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Skip cells whose recorded fingerprint matches and whose artifacts
    /// are all present.
    pub resume: bool,
    /// Overrides `GridSpec::workers` when set.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GridRun {
    pub summary: GridSummary,
    pub summary_path: PathBuf,
    /// `"<config>/<scale>"` keys of cells trained in this run.
    pub computed: Vec<String>,
    /// Keys of cells reused from a previous run.
    pub reused: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CellStatusFile {
    fingerprint: String,
    row: SummaryRow,
}

fn cell_key(config: &PatchConfig, scale: Option<Scale>) -> String {
    format!("{}/{}", config.name(), scale_dir_name(scale))
}

fn failed_row(
    config: &PatchConfig,
    scale: Option<Scale>,
    fingerprint: String,
    error: String,
) -> SummaryRow {
    SummaryRow {
        config_name: config.name(),
        scale,
        status: CellStatus::Failed,
        fingerprint,
        val_auc: None,
        test_auc: None,
        test_accuracy: None,
        test_sensitivity: None,
        checkpoint_path: None,
        val_report_path: None,
        test_report_path: None,
        error: Some(error),
    }
}

fn reusable(dir: &Path, fingerprint: &str) -> Option<SummaryRow> {
    let status: CellStatusFile = fsutil::read_json(&dir.join(CELL_STATUS_FILE)).ok()?;
    if status.fingerprint != fingerprint || !status.row.is_ok() {
        return None;
    }
    let required = [
        status.row.checkpoint_path.as_ref()?,
        status.row.val_report_path.as_ref()?,
    ];
    let mut all = required.to_vec();
    if let Some(t) = status.row.test_report_path.as_ref() {
        all.push(t);
    }
    let present = all.iter().all(|p| p.is_file()) && dir.join("weights.safetensors").is_file();
    present.then_some(status.row)
}

fn execute_cell(
    data: &LoadedDataset,
    info: &RunInfo,
    dir: &Path,
    fingerprint: &str,
) -> Result<SummaryRow> {
    // A stale status file must not survive a failed rerun.
    let status_path = dir.join(CELL_STATUS_FILE);
    if status_path.exists() {
        std::fs::remove_file(&status_path).map_err(|e| Error::io(&status_path, e))?;
    }
    let result = run_cell(data, info, dir)?;
    let row = SummaryRow {
        config_name: info.config.name(),
        scale: info.scale,
        status: CellStatus::Ok,
        fingerprint: fingerprint.to_string(),
        val_auc: Some(result.val.auc),
        test_auc: result.test.as_ref().map(|r| r.auc),
        test_accuracy: result.test.as_ref().map(|r| r.accuracy),
        test_sensitivity: result.test.as_ref().map(|r| r.sensitivity),
        checkpoint_path: Some(result.checkpoint_path),
        val_report_path: Some(dir.join(VAL_REPORT_FILE)),
        test_report_path: result.test.as_ref().map(|_| dir.join(TEST_REPORT_FILE)),
        error: None,
    };
    fsutil::write_json(
        &status_path,
        &CellStatusFile {
            fingerprint: fingerprint.to_string(),
            row: row.clone(),
        },
    )?;
    Ok(row)
}

/// Runs every cell of the grid. Cell failures are recorded in the summary
/// and do not stop other cells; configuration and dataset problems are
/// returned as errors before any cell runs.
pub fn run_grid(spec: &GridSpec, opts: RunOptions) -> Result<GridRun> {
    spec.validate()?;
    let roi = match &spec.roi_spec {
        Some(p) => RoiSpec::load(p)?,
        None => RoiSpec::default(),
    };
    let manifest = DatasetManifest::load(&spec.manifest)?;
    if manifest.kind != ManifestKind::Aligned {
        return Err(Error::Config(
            "grid needs a manifest of aligned images (run ingest first)".into(),
        ));
    }
    let weights_sha256 = weights_digest(&spec.weights)?;
    std::fs::create_dir_all(&spec.out_root).map_err(|e| Error::io(&spec.out_root, e))?;
    let data = LoadedDataset::load(&manifest)?;

    let cells: Vec<(PatchConfig, Option<Scale>, RunInfo, String, PathBuf)> = spec
        .cells()?
        .into_iter()
        .map(|(config, scale)| {
            let info = RunInfo {
                config,
                scale,
                roi_spec: roi.clone(),
                backbone: spec.backbone,
                train: TrainConfig {
                    seed: cell_seed(spec.train.seed, &config, scale),
                    ..spec.train.clone()
                },
                weights: spec.weights.clone(),
                weights_sha256: weights_sha256.clone(),
                manifest_fingerprint: data.fingerprint.clone(),
            };
            let fp = info.fingerprint();
            let dir = spec
                .out_root
                .join(config.name())
                .join(scale_dir_name(scale));
            (config, scale, info, fp, dir)
        })
        .collect();

    let workers = opts.workers.unwrap_or(spec.workers).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let outcomes: Vec<(SummaryRow, bool)> = pool.install(|| {
        cells
            .par_iter()
            .map(|(config, scale, info, fp, dir)| {
                let key = cell_key(config, *scale);
                if opts.resume {
                    if let Some(row) = reusable(dir, fp) {
                        info!("{key}: up to date, skipping");
                        return (row, false);
                    }
                }
                info!("{key}: training");
                let attempt = catch_unwind(AssertUnwindSafe(|| execute_cell(&data, info, dir, fp)));
                let row = match attempt {
                    Ok(Ok(row)) => row,
                    Ok(Err(e)) => {
                        let msg = error_chain(&e);
                        warn!("{key}: failed: {msg}");
                        failed_row(config, *scale, fp.clone(), msg)
                    }
                    Err(panic) => {
                        let msg = panic
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "panic".into());
                        warn!("{key}: panicked: {msg}");
                        failed_row(config, *scale, fp.clone(), format!("panic: {msg}"))
                    }
                };
                (row, true)
            })
            .collect()
    });

    let mut computed = Vec::new();
    let mut reused = Vec::new();
    let mut rows = Vec::with_capacity(outcomes.len());
    for (row, ran) in outcomes {
        let key = format!("{}/{}", row.config_name, scale_dir_name(row.scale));
        if ran {
            computed.push(key);
        } else {
            reused.push(key);
        }
        rows.push(row);
    }
    let summary = GridSummary { rows };
    let summary_path = summary.write(&spec.out_root)?;
    info!(
        "grid finished: {} ok, {} failed; summary at {}",
        summary.ok_count(),
        summary.failed_count(),
        summary_path.display()
    );
    Ok(GridRun {
        summary,
        summary_path,
        computed,
        reused,
    })
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cause = e.source();
    while let Some(c) = cause {
        msg.push_str(": ");
        msg.push_str(&c.to_string());
        cause = c.source();
    }
    msg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(configs: &[&str], scales: &[Scale]) -> GridSpec {
        GridSpec {
            manifest: "m.json".into(),
            roi_spec: None,
            configs: configs.iter().map(|s| s.to_string()).collect(),
            scales: scales.to_vec(),
            train: TrainConfig::default(),
            backbone: BackboneConfig::default(),
            weights: WeightSource::Random,
            out_root: "out".into(),
            workers: 1,
        }
    }

    #[test]
    fn full_face_collapses_across_scales() {
        let spec = spec_with(&["FULL_FACE"], &Scale::ALL);
        assert_eq!(spec.cells().unwrap(), vec![(PatchConfig::FullFace, None)]);
    }

    #[test]
    fn default_grid_has_43_cells() {
        let spec = spec_with(&[], &Scale::ALL);
        let spec = GridSpec {
            configs: default_configs(),
            ..spec
        };
        assert_eq!(spec.cells().unwrap().len(), 43);
    }

    #[test]
    fn cardinality_formula() {
        let all = default_configs();
        for n_scales in 1..=3 {
            for take in [1usize, 2, 5, 15] {
                let names: Vec<&str> = all.iter().take(take).map(String::as_str).collect();
                let spec = spec_with(&names, &Scale::ALL[..n_scales]);
                let non_full = names.iter().filter(|n| **n != "FULL_FACE").count();
                let has_full = names.contains(&"FULL_FACE") as usize;
                assert_eq!(spec.cells().unwrap().len(), non_full * n_scales + has_full);
            }
        }
    }

    #[test]
    fn unknown_config_rejected() {
        assert!(spec_with(&["LC+RC"], &Scale::ALL).validate().is_err());
        assert!(spec_with(&["XX"], &Scale::ALL).validate().is_err());
    }

    #[test]
    fn cell_seeds_differ() {
        let f = PatchConfig::regions(&[crate::roi::Region::F]).unwrap();
        let a = cell_seed(0, &f, Some(Scale::Large));
        assert_eq!(a, cell_seed(0, &f, Some(Scale::Large)));
        assert_ne!(a, cell_seed(0, &f, Some(Scale::Small)));
        assert_ne!(a, cell_seed(1, &f, Some(Scale::Large)));
        assert_ne!(a, cell_seed(0, &PatchConfig::FullFace, None));
    }

    #[test]
    fn spec_parses_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.toml");
        std::fs::write(
            &path,
            r#"
manifest = "data/manifest.json"
out_root = "runs"
configs = ["FULL_FACE", "N+LC"]
scales = ["medium"]
weights = { kind = "random" }

[train]
epochs = 3
batch_size = 8

[backbone]
base_width = 8
input_downsample = 2
"#,
        )
        .unwrap();
        let spec = GridSpec::load(&path).unwrap();
        assert_eq!(spec.manifest, dir.path().join("data/manifest.json"));
        assert_eq!(spec.train.epochs, 3);
        assert_eq!(spec.train.lr, 1e-3);
        assert_eq!(spec.backbone.base_width, 8);
        assert_eq!(spec.cells().unwrap().len(), 2);
    }
}
