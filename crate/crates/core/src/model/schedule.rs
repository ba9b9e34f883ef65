use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel normalization applied after masking, on intensities scaled
/// to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// Statistics of the corpus the pretrained backbone was trained on.
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Optimizer, schedule and loop settings. Defaults: SGD with momentum 0.9 at
/// η = 1e-3, step decay ×0.1 every 7 epochs, 30 epochs, batch 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            momentum: 0.9,
            step_size: 7,
            gamma: 0.1,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            shuffle: true,
            normalization: Normalization::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.step_size == 0 {
            return bad("step_size must be positive");
        }
        // gamma = 1 is accepted as "no decay".
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.normalization.std.iter().any(|&s| !(s > 0.0)) {
            return bad("normalization std must be positive");
        }
        let last_decays = (self.epochs - 1) / self.step_size;
        if decayed(self.lr, self.gamma, last_decays) <= 0.0 {
            return bad("learning rate underflows to zero before the final epoch");
        }
        Ok(())
    }
}

/// `lr · gamma^k`, rounded to 15 significant digits so that decimal
/// schedules (1e-3 → 1e-4 → …) come out as the exact decimal literals
/// rather than accumulating binary representation error.
fn decayed(lr: f64, gamma: f64, k: usize) -> f64 {
    let raw = lr * gamma.powi(k as i32);
    if raw == 0.0 || !raw.is_finite() {
        return raw;
    }
    format!("{raw:.14e}").parse().unwrap_or(raw)
}

/// Step-decay learning rate for a 0-based epoch:
/// `lr · gamma^floor(epoch / step_size)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside schedule of {} epochs",
            cfg.epochs
        )));
    }
    Ok(decayed(cfg.lr, cfg.gamma, epoch / cfg.step_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_sequence() {
        let cfg = TrainConfig::default();
        let expected = |e: usize| match e {
            0..=6 => 1e-3,
            7..=13 => 1e-4,
            14..=20 => 1e-5,
            21..=27 => 1e-6,
            _ => 1e-7,
        };
        for e in 0..30 {
            assert_eq!(lr_at_epoch(&cfg, e).unwrap(), expected(e), "epoch {e}");
        }
        assert!(lr_at_epoch(&cfg, 30).is_err());
    }

    #[test]
    fn unit_gamma_keeps_lr() {
        let cfg = TrainConfig {
            gamma: 1.0,
            ..Default::default()
        };
        for e in 0..30 {
            assert_eq!(lr_at_epoch(&cfg, e).unwrap(), 1e-3);
        }
    }

    #[test]
    fn custom_schedule() {
        let cfg = TrainConfig {
            lr: 1.0,
            gamma: 0.5,
            step_size: 3,
            epochs: 10,
            ..Default::default()
        };
        assert_eq!(lr_at_epoch(&cfg, 8).unwrap(), 0.25);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let cases = [
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                step_size: 0,
                ..Default::default()
            },
            TrainConfig {
                gamma: 0.0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                lr: 1e-300,
                gamma: 1e-10,
                epochs: 300,
                step_size: 1,
                ..Default::default()
            },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
