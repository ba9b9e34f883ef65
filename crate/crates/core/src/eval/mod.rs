//! Threshold metrics, ROC curves and trapezoid AUC over scored examples.

mod plot;

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::ingest::{Label, Split};
use crate::model::{predict_logits, sigmoid, Classifier, SplitTensors};
use crate::roi::Scale;

pub use plot::emit_roc_plot;

/// Threshold used for accuracy, sensitivity and specificity in reports.
pub const REPORT_THRESHOLD: f64 = 0.5;

const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub image_id: String,
    pub y_true: Label,
    pub score: f64,
}

impl ScoredExample {
    pub fn new(image_id: impl Into<String>, y_true: Label, score: f64) -> Result<Self> {
        let image_id = image_id.into();
        if !(score.is_finite() && score > 0.0 && score < 1.0) {
            return Err(Error::Metric(format!(
                "score {score} for '{image_id}' is not in (0, 1)"
            )));
        }
        Ok(ScoredExample {
            image_id,
            y_true,
            score,
        })
    }

    /// σ(logit), kept strictly inside (0, 1): for |logit| beyond ~36.7 the
    /// f64 sigmoid rounds to 0 or 1 and is pinned to the nearest interior
    /// double instead.
    pub fn from_logit(image_id: impl Into<String>, y_true: Label, logit: f64) -> Result<Self> {
        let s = sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        ScoredExample::new(image_id, y_true, s)
    }
}

fn class_counts(scored: &[ScoredExample]) -> Result<(usize, usize)> {
    let n_pos = scored
        .iter()
        .filter(|s| s.y_true == Label::Positive)
        .count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative examples"
        )));
    }
    Ok((n_pos, n_neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Predicts positive iff `score >= t`.
pub fn confusion_at_threshold(scored: &[ScoredExample], t: f64) -> Result<Confusion> {
    class_counts(scored)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in scored {
        match (s.score >= t, s.y_true) {
            (true, Label::Positive) => tp += 1,
            (true, Label::Negative) => fp += 1,
            (false, Label::Negative) => tn += 1,
            (false, Label::Positive) => fn_ += 1,
        }
    }
    Ok(Confusion {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / scored.len() as f64,
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from a threshold sweep over the distinct scores, highest
/// first, starting at (0, 0). Tied scores move the curve in one step.
pub fn roc_curve(scored: &[ScoredExample]) -> Result<Vec<RocPoint>> {
    let (n_pos, n_neg) = class_counts(scored)?;
    let mut sorted: Vec<&ScoredExample> = scored.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            match sorted[i].y_true {
                Label::Positive => tp += 1,
                Label::Negative => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn auc_trapezoid(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_name: String,
    /// `None` for the scale-independent full-face configuration.
    pub scale: Option<Scale>,
    pub split: Split,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub plot_path: Option<PathBuf>,
}

impl EvalReport {
    pub fn from_scores(
        config_name: impl Into<String>,
        scale: Option<Scale>,
        split: Split,
        scored: &[ScoredExample],
    ) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(scored)?;
        let c = confusion_at_threshold(scored, REPORT_THRESHOLD)?;
        let roc = roc_curve(scored)?;
        let auc = auc_trapezoid(&roc);
        Ok(EvalReport {
            schema_version: REPORT_SCHEMA,
            config_name: config_name.into(),
            scale,
            split,
            n_pos,
            n_neg,
            threshold: REPORT_THRESHOLD,
            accuracy: c.accuracy,
            sensitivity: c.sensitivity,
            specificity: c.specificity,
            roc,
            auc,
            plot_path: None,
        })
    }

    /// Legend label, e.g. `F+N+LC`, with the scale only when the panel
    /// context does not already say it.
    pub fn label(&self) -> String {
        match self.scale {
            Some(_) => self.config_name.clone(),
            None => "FULL FACE".to_string(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }
}

/// Scores every example of a prepared split with the model.
pub fn score_split(
    model: &Classifier,
    data: &SplitTensors,
    batch_size: usize,
) -> Result<Vec<ScoredExample>> {
    let logits = predict_logits(model, &data.images, batch_size)?;
    logits
        .iter()
        .zip(&data.image_ids)
        .zip(&data.labels)
        .map(|((&z, id), &label)| ScoredExample::from_logit(id.clone(), label, z as f64))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    image_id: String,
    y_true: u8,
    score: f64,
}

pub fn write_scores(path: &Path, scored: &[ScoredExample]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for s in scored {
        writer.serialize(ScoreRow {
            image_id: s.image_id.clone(),
            y_true: s.y_true.into(),
            score: s.score,
        })?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Serde(e.to_string()))?;
    fsutil::write_atomic(path, &bytes)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredExample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ScoreRow>() {
        let row = row?;
        let label = Label::try_from(row.y_true).map_err(Error::Metric)?;
        out.push(ScoredExample::new(row.image_id, label, row.score)?);
    }
    Ok(out)
}

/// Descending comparison helper shared by summary ranking.
pub(crate) fn desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(y: u8, score: f64) -> ScoredExample {
        ScoredExample::new("x", Label::try_from(y).unwrap(), score).unwrap()
    }

    /// Tie-corrected pairwise ranking statistic.
    fn mann_whitney(scored: &[ScoredExample]) -> f64 {
        let pos: Vec<f64> = scored
            .iter()
            .filter(|s| s.y_true == Label::Positive)
            .map(|s| s.score)
            .collect();
        let neg: Vec<f64> = scored
            .iter()
            .filter(|s| s.y_true == Label::Negative)
            .map(|s| s.score)
            .collect();
        let mut wins = 0.0;
        for p in &pos {
            for n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    /// Sweeps every distinct score plus a sentinel above the maximum.
    fn brute_force_roc(scored: &[ScoredExample]) -> Vec<(usize, usize)> {
        let mut thresholds: Vec<f64> = scored.iter().map(|s| s.score).collect();
        thresholds.push(f64::INFINITY);
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        thresholds
            .iter()
            .map(|&t| {
                let fp = scored
                    .iter()
                    .filter(|s| s.score >= t && s.y_true == Label::Negative)
                    .count();
                let tp = scored
                    .iter()
                    .filter(|s| s.score >= t && s.y_true == Label::Positive)
                    .count();
                (fp, tp)
            })
            .collect()
    }

    #[test]
    fn perfect_classifier_metrics() {
        let s = [ex(1, 0.9), ex(1, 0.8), ex(0, 0.2), ex(0, 0.1)];
        let c = confusion_at_threshold(&s, 0.5).unwrap();
        assert_eq!((c.accuracy, c.sensitivity, c.specificity), (1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_predictor_metrics() {
        let s = [ex(1, 0.7), ex(0, 0.7), ex(0, 0.7), ex(0, 0.7)];
        let c = confusion_at_threshold(&s, 0.5).unwrap();
        assert_eq!((c.accuracy, c.sensitivity, c.specificity), (0.25, 1.0, 0.0));
    }

    #[test]
    fn hand_counted_metrics() {
        // pos: 0.9 (TP), 0.5 (TP, boundary), 0.3 (FN); neg: 0.6 (FP), 0.4 (TN), 0.1 (TN)
        let s = [
            ex(1, 0.9),
            ex(1, 0.5),
            ex(1, 0.3),
            ex(0, 0.6),
            ex(0, 0.4),
            ex(0, 0.1),
        ];
        let c = confusion_at_threshold(&s, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 2, 1));
        assert_eq!(c.accuracy, 4.0 / 6.0);
        assert_eq!(c.sensitivity, 2.0 / 3.0);
        assert_eq!(c.specificity, 2.0 / 3.0);
    }

    #[test]
    fn single_class_rejected() {
        let s = [ex(1, 0.9), ex(1, 0.2)];
        assert!(matches!(
            confusion_at_threshold(&s, 0.5),
            Err(Error::Metric(_))
        ));
        assert!(roc_curve(&s).is_err());
    }

    #[test]
    fn separated_pair_roc() {
        let roc = roc_curve(&[ex(1, 0.9), ex(0, 0.1)]).unwrap();
        let pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(auc_trapezoid(&roc), 1.0);
    }

    #[test]
    fn all_tied_roc_is_diagonal() {
        let roc = roc_curve(&[ex(1, 0.4), ex(0, 0.4), ex(0, 0.4)]).unwrap();
        let pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, [(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc_trapezoid(&roc), 0.5);
    }

    #[test]
    fn roc_matches_brute_force_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let mut s: Vec<ScoredExample> = (0..10)
                .map(|i| ex((i % 2) as u8, (rng.random_range(1..8) as f64) / 8.0))
                .collect();
            s.push(ex(1, 0.05));
            s.push(ex(0, 0.95));
            let (n_pos, n_neg) = class_counts(&s).unwrap();
            let expected: Vec<(f64, f64)> = brute_force_roc(&s)
                .into_iter()
                .map(|(fp, tp)| (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64))
                .collect();
            let got: Vec<(f64, f64)> = roc_curve(&s)
                .unwrap()
                .iter()
                .map(|p| (p.fpr, p.tpr))
                .collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn auc_equals_mann_whitney() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let mut s: Vec<ScoredExample> = (0..n)
                .map(|_| {
                    ex(
                        rng.random_range(0..2),
                        rng.random_range(1..20) as f64 / 20.0,
                    )
                })
                .collect();
            s.push(ex(0, 0.5));
            s.push(ex(1, 0.5));
            let auc = auc_trapezoid(&roc_curve(&s).unwrap());
            assert!((auc - mann_whitney(&s)).abs() < 1e-9);
        }
    }

    #[test]
    fn from_logit_stays_in_open_interval() {
        for z in [-1e4, -40.0, 0.0, 40.0, 1e4] {
            let s = ScoredExample::from_logit("a", Label::Positive, z).unwrap();
            assert!(s.score > 0.0 && s.score < 1.0);
        }
        assert!(ScoredExample::new("a", Label::Positive, 1.0).is_err());
        assert!(ScoredExample::new("a", Label::Positive, f64::NAN).is_err());
    }

    #[test]
    fn scores_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let s = vec![ex(1, 0.123456789012345), ex(0, 1e-12)];
        write_scores(&path, &s).unwrap();
        assert_eq!(read_scores(&path).unwrap(), s);
    }
}
