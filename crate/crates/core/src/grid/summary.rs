use std::cmp::Ordering;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::desc;
use crate::fsutil;
use crate::roi::{PatchConfig, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_name: String,
    pub scale: Option<Scale>,
    pub status: CellStatus,
    pub fingerprint: String,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_sensitivity: Option<f64>,
    pub checkpoint_path: Option<PathBuf>,
    pub val_report_path: Option<PathBuf>,
    pub test_report_path: Option<PathBuf>,
    pub error: Option<String>,
}

impl SummaryRow {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    fn region_count(&self) -> usize {
        self.config_name
            .parse::<PatchConfig>()
            .map(|c| c.region_count())
            .unwrap_or(usize::MAX)
    }

    fn metric(&self, metric: RankMetric) -> Option<f64> {
        match metric {
            RankMetric::TestAuc => self.test_auc,
            RankMetric::TestSensitivity => self.test_sensitivity,
            RankMetric::TestAccuracy => self.test_accuracy,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub rows: Vec<SummaryRow>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    config_name: &'a str,
    scale: &'a str,
    status: CellStatus,
    val_auc: Option<f64>,
    test_auc: Option<f64>,
    test_accuracy: Option<f64>,
    test_sensitivity: Option<f64>,
    checkpoint_path: String,
    error: &'a str,
}

impl GridSummary {
    pub fn ok_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_ok()).count()
    }

    pub fn failed_count(&self) -> usize {
        self.rows.len() - self.ok_count()
    }

    pub fn find(&self, config_name: &str, scale: Option<Scale>) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.config_name == config_name && r.scale == scale)
    }

    /// Writes `summary.json` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            writer.serialize(CsvRow {
                config_name: &r.config_name,
                scale: r.scale.map(Scale::as_str).unwrap_or(""),
                status: r.status,
                val_auc: r.val_auc,
                test_auc: r.test_auc,
                test_accuracy: r.test_accuracy,
                test_sensitivity: r.test_sensitivity,
                checkpoint_path: r
                    .checkpoint_path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                error: r.error.as_deref().unwrap_or(""),
            })?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Serde(e.to_string()))?;
        fsutil::write_atomic(&dir.join("summary.csv"), &bytes)?;
        let json = dir.join("summary.json");
        fsutil::write_json(&json, self)?;
        Ok(json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    TestAuc,
    TestSensitivity,
    TestAccuracy,
}

impl FromStr for RankMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test_auc" => Ok(RankMetric::TestAuc),
            "test_sensitivity" => Ok(RankMetric::TestSensitivity),
            "test_accuracy" => Ok(RankMetric::TestAccuracy),
            other => Err(Error::Config(format!(
                "unknown metric '{other}' (expected test_auc, test_sensitivity or test_accuracy)"
            ))),
        }
    }
}

impl fmt::Display for RankMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankMetric::TestAuc => "test_auc",
            RankMetric::TestSensitivity => "test_sensitivity",
            RankMetric::TestAccuracy => "test_accuracy",
        })
    }
}

/// Rows sorted by `metric` descending; ties go to fewer regions, then the
/// configuration name, then scale. Rows without the metric sort last.
pub fn rank_summary(summary: &GridSummary, metric: RankMetric) -> Result<Vec<SummaryRow>> {
    if summary.rows.is_empty() {
        return Err(Error::Config("cannot rank an empty summary".into()));
    }
    let mut rows = summary.rows.clone();
    rows.sort_by(|a, b| {
        let by_metric = match (a.metric(metric), b.metric(metric)) {
            (Some(x), Some(y)) => desc(x, y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_metric
            .then_with(|| a.region_count().cmp(&b.region_count()))
            .then_with(|| a.config_name.cmp(&b.config_name))
            .then_with(|| a.scale.cmp(&b.scale))
    });
    Ok(rows)
}
