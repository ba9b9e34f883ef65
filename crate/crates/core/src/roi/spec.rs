use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Region, Scale};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::{FRAME_HEIGHT, FRAME_WIDTH};

/// Shipped rectangle table, hand-placed around the default canonical eye
/// positions. It is illustrative data, not a measured ground truth.
pub const DEFAULT_ROI_SPEC_JSON: &str = include_str!("../../data/roi_default.json");

const SCHEMA_VERSION: u32 = 1;

/// Axis-aligned rectangle in canonical-frame pixel indices: rows
/// `top..top+height`, columns `left..left+width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub top: u32,
    pub left: u32,
    pub height: u32,
    pub width: u32,
}

impl Rect {
    pub fn new(top: u32, left: u32, height: u32, width: u32) -> Self {
        Rect {
            top,
            left,
            height,
            width,
        }
    }

    pub fn bottom(&self) -> u32 {
        self.top + self.height
    }

    pub fn right(&self) -> u32 {
        self.left + self.width
    }

    pub fn area(&self) -> u64 {
        self.height as u64 * self.width as u64
    }

    pub fn contains_pixel(&self, row: u32, col: u32) -> bool {
        row >= self.top && row < self.bottom() && col >= self.left && col < self.right()
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.top >= self.top
            && other.left >= self.left
            && other.bottom() <= self.bottom()
            && other.right() <= self.right()
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let top = self.top.max(other.top);
        let left = self.left.max(other.left);
        let bottom = self.bottom().min(other.bottom());
        let right = self.right().min(other.right());
        (top < bottom && left < right).then(|| Rect::new(top, left, bottom - top, right - left))
    }

    /// Reflection about the vertical center line of a frame `frame_width` wide.
    pub fn mirrored(&self, frame_width: u32) -> Rect {
        Rect::new(
            self.top,
            frame_width - self.right(),
            self.height,
            self.width,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameSize {
    height: u32,
    width: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RectEntry {
    region: Region,
    scale: Scale,
    #[serde(flatten)]
    rect: Rect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoiSpecFile {
    schema_version: u32,
    frame: FrameSize,
    rects: Vec<RectEntry>,
}

/// Validated (region, scale) → rectangle table for the 150×130 frame.
///
/// Construction enforces: all 12 cells present, every rectangle nonempty and
/// inside the frame, and small ⊆ medium ⊆ large for each region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RoiSpecFile", into = "RoiSpecFile")]
pub struct RoiSpec {
    rects: BTreeMap<(Region, Scale), Rect>,
}

impl RoiSpec {
    pub fn new(cells: impl IntoIterator<Item = (Region, Scale, Rect)>) -> Result<Self> {
        let mut rects = BTreeMap::new();
        for (region, scale, rect) in cells {
            if rects.insert((region, scale), rect).is_some() {
                return Err(Error::RoiSpec(format!(
                    "duplicate entry for {region}/{scale}"
                )));
            }
        }
        let spec = RoiSpec { rects };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for region in Region::ALL {
            for scale in Scale::ALL {
                let r = self
                    .rects
                    .get(&(region, scale))
                    .ok_or_else(|| Error::RoiSpec(format!("missing entry for {region}/{scale}")))?;
                if r.height == 0 || r.width == 0 {
                    return Err(Error::RoiSpec(format!("{region}/{scale} has zero area")));
                }
                if r.bottom() > FRAME_HEIGHT as u32 || r.right() > FRAME_WIDTH as u32 {
                    return Err(Error::RoiSpec(format!(
                        "{region}/{scale} {r:?} exceeds the {FRAME_HEIGHT}x{FRAME_WIDTH} frame"
                    )));
                }
            }
            let large = self.rect(region, Scale::Large);
            let medium = self.rect(region, Scale::Medium);
            let small = self.rect(region, Scale::Small);
            if !large.contains(&medium) || !medium.contains(&small) {
                return Err(Error::RoiSpec(format!(
                    "{region}: scales must nest (small within medium within large)"
                )));
            }
        }
        Ok(())
    }

    pub fn rect(&self, region: Region, scale: Scale) -> Rect {
        self.rects[&(region, scale)]
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: RoiSpecFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("ROI spec serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json_string();
        text.push('\n');
        fsutil::write_atomic(path, text.as_bytes())
    }

    /// True when RC is the horizontal reflection of LC at every scale.
    pub fn cheeks_mirrored(&self) -> bool {
        Scale::ALL.iter().all(|&s| {
            self.rect(Region::LC, s).mirrored(FRAME_WIDTH as u32) == self.rect(Region::RC, s)
        })
    }
}

impl TryFrom<RoiSpecFile> for RoiSpec {
    type Error = Error;

    fn try_from(file: RoiSpecFile) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::RoiSpec(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        if file.frame.height != FRAME_HEIGHT as u32 || file.frame.width != FRAME_WIDTH as u32 {
            return Err(Error::RoiSpec(format!(
                "frame must be {FRAME_HEIGHT}x{FRAME_WIDTH}, got {}x{}",
                file.frame.height, file.frame.width
            )));
        }
        RoiSpec::new(file.rects.into_iter().map(|e| (e.region, e.scale, e.rect)))
    }
}

impl From<RoiSpec> for RoiSpecFile {
    fn from(spec: RoiSpec) -> Self {
        RoiSpecFile {
            schema_version: SCHEMA_VERSION,
            frame: FrameSize {
                height: FRAME_HEIGHT as u32,
                width: FRAME_WIDTH as u32,
            },
            rects: spec
                .rects
                .into_iter()
                .map(|((region, scale), rect)| RectEntry {
                    region,
                    scale,
                    rect,
                })
                .collect(),
        }
    }
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec::from_json_str(DEFAULT_ROI_SPEC_JSON).expect("shipped ROI spec is valid")
    }
}
