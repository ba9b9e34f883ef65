//! Synthetic canonical-frame faces with a planted, region-localized signal.
//!
//! Every image is the same smooth face template plus i.i.d. Gaussian pixel
//! noise. Positives additionally get a fixed per-channel offset inside the
//! signal rectangles, so a classifier can only succeed by looking there.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CanonicalEyes, DatasetManifest, Label, ManifestEntry, ManifestKind, Split};
use crate::error::{Error, Result};
use crate::roi::{Rect, Region, RoiSpec, Scale};
use crate::{FRAME_HEIGHT, FRAME_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub seed: u64,
    pub train: ClassCounts,
    pub val: ClassCounts,
    pub test: ClassCounts,
    /// Regions whose rectangles (at `signal_scale`) carry the signal.
    pub signal_regions: Vec<Region>,
    pub signal_scale: Scale,
    /// Extra explicit signal rectangles in canonical-frame pixels.
    pub signal_rects: Vec<Rect>,
    /// Per-channel offset added to positives inside the signal area.
    pub amplitude: [f64; 3],
    /// Standard deviation of the per-pixel, per-channel noise.
    pub noise_sigma: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 7,
            train: ClassCounts {
                positive: 100,
                negative: 100,
            },
            val: ClassCounts {
                positive: 30,
                negative: 30,
            },
            test: ClassCounts {
                positive: 30,
                negative: 30,
            },
            signal_regions: vec![Region::LC, Region::RC],
            signal_scale: Scale::Small,
            signal_rects: Vec::new(),
            amplitude: [40.0, -12.0, -12.0],
            noise_sigma: 12.0,
        }
    }
}

impl FixtureSpec {
    fn counts(&self, split: Split) -> ClassCounts {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// All signal rectangles, validated against the canonical frame.
    pub fn signal_area(&self, roi: &RoiSpec) -> Result<Vec<Rect>> {
        let mut rects: Vec<Rect> = self
            .signal_regions
            .iter()
            .map(|&r| roi.rect(r, self.signal_scale))
            .collect();
        for r in &self.signal_rects {
            if r.height == 0
                || r.width == 0
                || r.bottom() > FRAME_HEIGHT as u32
                || r.right() > FRAME_WIDTH as u32
            {
                return Err(Error::Config(format!(
                    "signal rectangle {r:?} lies outside the {FRAME_HEIGHT}x{FRAME_WIDTH} frame"
                )));
            }
            rects.push(*r);
        }
        Ok(rects)
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(
                "noise_sigma must be a finite nonnegative number".into(),
            ));
        }
        if self.amplitude.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("signal amplitude must be finite".into()));
        }
        Ok(())
    }
}

/// Shared face template: dark background, skin-toned ellipse, darker eyes
/// at the canonical positions, a mouth band.
fn template() -> Vec<[f64; 3]> {
    let canon = CanonicalEyes::default();
    let mut px = Vec::with_capacity(FRAME_HEIGHT * FRAME_WIDTH);
    for row in 0..FRAME_HEIGHT {
        for col in 0..FRAME_WIDTH {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let face = ((x - 65.0) / 58.0).powi(2) + ((y - 78.0) / 74.0).powi(2) <= 1.0;
            let eye = [canon.left, canon.right]
                .iter()
                .any(|e| (x - e.x).hypot(y - e.y) <= 6.0);
            let mouth = (118.0..124.0).contains(&y) && (48.0..82.0).contains(&x);
            let shade = 1.0 - 0.15 * (y / FRAME_HEIGHT as f64);
            let color = if eye {
                [60.0, 45.0, 40.0]
            } else if mouth {
                [150.0, 80.0, 80.0]
            } else if face {
                [205.0 * shade, 160.0 * shade, 140.0 * shade]
            } else {
                [40.0, 42.0, 50.0]
            };
            px.push(color);
        }
    }
    px
}

fn image_seed(seed: u64, image_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{image_id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn render(
    base: &[[f64; 3]],
    signal: &[Rect],
    label: Label,
    spec: &FixtureSpec,
    image_id: &str,
) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(spec.seed, image_id));
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut img = RgbImage::new(FRAME_WIDTH as u32, FRAME_HEIGHT as u32);
    for row in 0..FRAME_HEIGHT {
        for col in 0..FRAME_WIDTH {
            let planted = label == Label::Positive
                && signal
                    .iter()
                    .any(|r| r.contains_pixel(row as u32, col as u32));
            let mut out = [0u8; 3];
            for c in 0..3 {
                let mut v = base[row * FRAME_WIDTH + col][c] + noise.sample(&mut rng);
                if planted {
                    v += spec.amplitude[c];
                }
                out[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(col as u32, row as u32, Rgb(out));
        }
    }
    img
}

/// Writes a fixture tree under `out`:
/// `{positive,negative}/{train,val,test}/<id>.png`, an `eyes.csv` with the
/// canonical eye positions (so the tree is also valid `ingest` input), and
/// `manifest.json` describing the images as already aligned.
pub fn generate_fixture(spec: &FixtureSpec, roi: &RoiSpec, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let signal = spec.signal_area(roi)?;
    let base = template();

    let mut jobs = Vec::new();
    for split in Split::ALL {
        let counts = spec.counts(split);
        for (label, n) in [
            (Label::Positive, counts.positive),
            (Label::Negative, counts.negative),
        ] {
            let dir = out.join(label.class_name()).join(split.as_str());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for i in 0..n {
                let prefix = if label == Label::Positive {
                    "pos"
                } else {
                    "neg"
                };
                let image_id = format!("{prefix}_{split}_{i:04}");
                let path = dir.join(format!("{image_id}.png"));
                jobs.push(ManifestEntry {
                    image_id,
                    path,
                    label,
                    split,
                });
            }
        }
    }

    jobs.par_iter().try_for_each(|job| {
        render(&base, &signal, job.label, spec, &job.image_id)
            .save(&job.path)
            .map_err(Error::from)
    })?;

    let canon = CanonicalEyes::default();
    let mut sidecar = String::from("image_id,lx,ly,rx,ry\n");
    for job in &jobs {
        sidecar.push_str(&format!(
            "{},{},{},{},{}\n",
            job.image_id, canon.left.x, canon.left.y, canon.right.x, canon.right.y
        ));
    }
    crate::fsutil::write_atomic(&out.join("eyes.csv"), sidecar.as_bytes())?;

    let manifest = DatasetManifest::new(ManifestKind::Aligned, jobs, Vec::new())?;
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}
