//! Facial regions of interest, their three nested scales, and the patch
//! configurations built from them.
//!
//! Regions use the viewer frame: `LC` is the cheek on the image-left side
//! (the subject's anatomical right), `RC` the image-right cheek.

mod mask;
mod spec;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use mask::{apply_mask, build_mask, Mask};
pub use spec::{Rect, RoiSpec, DEFAULT_ROI_SPEC_JSON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    F,
    N,
    LC,
    RC,
}

impl Region {
    /// Canonical order used for naming: F, N, LC, RC.
    pub const ALL: [Region; 4] = [Region::F, Region::N, Region::LC, Region::RC];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::F => "F",
            Region::N => "N",
            Region::LC => "LC",
            Region::RC => "RC",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F" => Ok(Region::F),
            "N" => Ok(Region::N),
            "LC" => Ok(Region::LC),
            "RC" => Ok(Region::RC),
            other => Err(Error::Config(format!("unknown region '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Large,
    Medium,
    Small,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Large, Scale::Medium, Scale::Small];

    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Large => "large",
            Scale::Medium => "medium",
            Scale::Small => "small",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "large" => Ok(Scale::Large),
            "medium" => Ok(Scale::Medium),
            "small" => Ok(Scale::Small),
            other => Err(Error::Config(format!("unknown scale '{other}'"))),
        }
    }
}

/// A nonempty set of regions, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegionSet(u8);

impl RegionSet {
    pub fn new(regions: &[Region]) -> Result<Self> {
        let mut bits = 0u8;
        for r in regions {
            if bits & r.bit() != 0 {
                return Err(Error::Config(format!("region {r} listed twice")));
            }
            bits |= r.bit();
        }
        if bits == 0 {
            return Err(Error::Config(
                "a patch configuration needs at least one region".into(),
            ));
        }
        Ok(RegionSet(bits))
    }

    pub fn contains(self, region: Region) -> bool {
        self.0 & region.bit() != 0
    }

    pub fn is_subset(self, other: RegionSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Regions in canonical order.
    pub fn iter(self) -> impl Iterator<Item = Region> {
        Region::ALL.into_iter().filter(move |r| self.contains(*r))
    }
}

/// Which pixels survive masking: a union of regions, or the whole face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchConfig {
    FullFace,
    Regions(RegionSet),
}

impl PatchConfig {
    pub const FULL_FACE_NAME: &'static str = "FULL_FACE";

    pub fn regions(regions: &[Region]) -> Result<Self> {
        Ok(PatchConfig::Regions(RegionSet::new(regions)?))
    }

    pub fn is_full_face(&self) -> bool {
        matches!(self, PatchConfig::FullFace)
    }

    /// Number of regions; FULL_FACE counts as all four.
    pub fn region_count(&self) -> usize {
        match self {
            PatchConfig::FullFace => Region::ALL.len(),
            PatchConfig::Regions(set) => set.len(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            PatchConfig::FullFace => Self::FULL_FACE_NAME.to_string(),
            PatchConfig::Regions(set) => {
                set.iter().map(Region::as_str).collect::<Vec<_>>().join("+")
            }
        }
    }
}

impl fmt::Display for PatchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PatchConfig {
    type Err = Error;

    /// Accepts `FULL_FACE` or regions joined by `+` in any order.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case(Self::FULL_FACE_NAME) {
            return Ok(PatchConfig::FullFace);
        }
        let regions = s
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<Region>>>()?;
        PatchConfig::regions(&regions)
    }
}

impl Serialize for PatchConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for PatchConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The fifteen experimental configurations, in presentation order: the
/// full-face baseline, four singles, five pairs, four triples, all four.
///
/// The cheek pair LC+RC is not part of the grid.
pub fn enumerate_configs() -> Vec<PatchConfig> {
    use Region::*;
    let sets: [&[Region]; 14] = [
        &[F],
        &[N],
        &[LC],
        &[RC],
        &[F, N],
        &[F, LC],
        &[F, RC],
        &[N, LC],
        &[N, RC],
        &[F, N, LC],
        &[F, N, RC],
        &[F, LC, RC],
        &[N, LC, RC],
        &[F, N, LC, RC],
    ];
    std::iter::once(PatchConfig::FullFace)
        .chain(
            sets.iter()
                .map(|s| PatchConfig::regions(s).expect("static region sets are valid")),
        )
        .collect()
}

/// Resolves a configuration name against [`enumerate_configs`].
pub fn resolve_config(name: &str) -> Result<PatchConfig> {
    let parsed: PatchConfig = name.parse()?;
    if enumerate_configs().contains(&parsed) {
        Ok(parsed)
    } else {
        Err(Error::Config(format!(
            "configuration '{}' is not one of the fifteen grid configurations",
            parsed.name()
        )))
    }
}
