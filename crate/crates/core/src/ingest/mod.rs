//! Face ingestion: eye annotations, similarity alignment into the canonical
//! 150×130 frame, dataset manifests, and the synthetic fixture generator.

mod align;
mod fixture;
mod manifest;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{FRAME_HEIGHT, FRAME_WIDTH};

pub use align::{align_face, CanonicalEyes, Point, SimilarityTransform};
pub use fixture::{generate_fixture, ClassCounts, FixtureSpec};
pub use manifest::{
    build_manifest, ingest, read_sidecar, DatasetManifest, ManifestEntry, ManifestKind,
    ManifestLayout, SkippedFile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl Label {
    pub fn as_f32(self) -> f32 {
        self as u8 as f32
    }

    pub fn class_name(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Manually placed eye landmarks for one raw image, viewer frame,
/// continuous pixel coordinates (pixel `i` spans `[i, i+1)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeAnnotation {
    pub image_id: String,
    pub left_eye: Point,
    pub right_eye: Point,
}

impl EyeAnnotation {
    /// Checks the landmark ordering and that both points lie inside a
    /// `width`×`height` image.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let reject = |reason: String| Error::Annotation {
            image_id: self.image_id.clone(),
            reason,
        };
        if self.left_eye.x >= self.right_eye.x {
            return Err(reject(format!(
                "left eye x ({}) must be smaller than right eye x ({}) in the viewer frame",
                self.left_eye.x, self.right_eye.x
            )));
        }
        for (name, p) in [("left", self.left_eye), ("right", self.right_eye)] {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && (0.0..=width as f64).contains(&p.x)
                && (0.0..=height as f64).contains(&p.y);
            if !inside {
                return Err(reject(format!(
                    "{name} eye ({}, {}) outside the {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// A face in the canonical frame, ready for masking.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedImage {
    pub image_id: String,
    pub pixels: RgbImage,
    pub label: Label,
    pub split: Split,
    pub source: String,
}

impl AlignedImage {
    pub fn new(
        image_id: impl Into<String>,
        pixels: RgbImage,
        label: Label,
        split: Split,
        source: impl Into<String>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        check_frame(&image_id, &pixels)?;
        Ok(AlignedImage {
            image_id,
            pixels,
            label,
            split,
            source: source.into(),
        })
    }

    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        let pixels = load_rgb(&entry.image_id, &entry.path)?;
        AlignedImage::new(
            entry.image_id.clone(),
            pixels,
            entry.label,
            entry.split,
            entry.path.display().to_string(),
        )
    }
}

fn check_frame(image_id: &str, pixels: &RgbImage) -> Result<()> {
    let (w, h) = pixels.dimensions();
    if h as usize != FRAME_HEIGHT || w as usize != FRAME_WIDTH {
        return Err(Error::Ingest {
            image_id: image_id.to_string(),
            reason: format!("expected a {FRAME_HEIGHT}x{FRAME_WIDTH} aligned image, got {h}x{w}"),
        });
    }
    Ok(())
}

pub(crate) fn load_rgb(image_id: &str, path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Ingest {
            image_id: image_id.to_string(),
            reason: format!("cannot decode {}: {e}", path.display()),
        })
}
