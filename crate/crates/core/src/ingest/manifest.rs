use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{align_face, load_rgb, CanonicalEyes, EyeAnnotation, Label, Point, Split};
use crate::error::{Error, Result};
use crate::fsutil;

const SCHEMA_VERSION: u32 = 1;
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Directory conventions for a raw dataset tree:
///
/// ```text
/// root/eyes.csv
/// root/positive/[train|val|test/]*.png
/// root/negative/[train|val|test/]*.png
/// ```
///
/// Images directly under a class folder take `default_split`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifestLayout {
    pub positive_dir: String,
    pub negative_dir: String,
    pub sidecar: String,
    pub default_split: Split,
}

impl Default for ManifestLayout {
    fn default() -> Self {
        ManifestLayout {
            positive_dir: "positive".into(),
            negative_dir: "negative".into(),
            sidecar: "eyes.csv".into(),
            default_split: Split::Train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    /// Entries point at raw photographs that still need alignment.
    Raw,
    /// Entries point at 150×130 canonical-frame images.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub kind: ManifestKind,
    pub entries: Vec<ManifestEntry>,
    /// Tallies keyed `"<class>/<split>"`, e.g. `"positive/train"`.
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub skipped: Vec<SkippedFile>,
}

fn count_key(label: Label, split: Split) -> String {
    format!("{}/{}", label.class_name(), split)
}

impl DatasetManifest {
    pub fn new(
        kind: ManifestKind,
        mut entries: Vec<ManifestEntry>,
        skipped: Vec<SkippedFile>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate image_id '{}'",
                    e.image_id
                )));
            }
        }
        entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let counts = tally(&entries);
        Ok(DatasetManifest {
            schema_version: SCHEMA_VERSION,
            kind,
            entries,
            counts,
            skipped,
        })
    }

    pub fn count(&self, label: Label, split: Split) -> usize {
        self.counts
            .get(&count_key(label, split))
            .copied()
            .unwrap_or(0)
    }

    pub fn class_total(&self, label: Label) -> usize {
        Split::ALL.iter().map(|&s| self.count(label, s)).sum()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// True when the stored counts agree with the entry list.
    pub fn counts_consistent(&self) -> bool {
        let recount = tally(&self.entries);
        let nonzero: BTreeMap<_, _> = self.counts.iter().filter(|(_, &v)| v > 0).collect();
        nonzero == recount.iter().collect()
    }

    /// Writes the manifest, storing paths relative to its directory where
    /// possible. Every entry's file must exist.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = self.clone();
        for e in &mut out.entries {
            if !e.path.is_file() {
                return Err(Error::Config(format!(
                    "manifest entry '{}' points at missing file {}",
                    e.image_id,
                    e.path.display()
                )));
            }
            if let Some(rel) = relative_to(&e.path, base) {
                e.path = rel;
            }
        }
        fsutil::write_json(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut manifest: DatasetManifest = fsutil::read_json(path)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest schema_version {}",
                manifest.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut manifest.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        if !manifest.counts_consistent() {
            return Err(Error::Config(format!(
                "{}: counts disagree with entries",
                path.display()
            )));
        }
        Ok(manifest)
    }

    /// Content hash over ids, labels, splits and image bytes.
    pub fn fingerprint(&self) -> Result<String> {
        let mut lines = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let digest = fsutil::sha256_file(&e.path)?;
            lines.push(format!(
                "{}\t{}\t{}\t{}",
                e.image_id,
                u8::from(e.label),
                e.split,
                digest
            ));
        }
        Ok(fsutil::sha256_hex(lines.join("\n").as_bytes()))
    }
}

fn tally(entries: &[ManifestEntry]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for e in entries {
        *counts.entry(count_key(e.label, e.split)).or_insert(0) += 1;
    }
    counts
}

fn relative_to(path: &Path, base: &Path) -> Option<PathBuf> {
    let abs = |p: &Path| fs::canonicalize(p).ok();
    let (p, b) = (
        abs(path)?,
        abs(if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        })?,
    );
    p.strip_prefix(&b).ok().map(Path::to_path_buf)
}

/// Reads the eye sidecar: header `image_id,lx,ly,rx,ry`, one row per image.
pub fn read_sidecar(path: &Path) -> Result<HashMap<String, EyeAnnotation>> {
    #[derive(Deserialize)]
    struct Row {
        image_id: String,
        lx: f64,
        ly: f64,
        rx: f64,
        ry: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("eye sidecar {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        let ann = EyeAnnotation {
            image_id: row.image_id.clone(),
            left_eye: Point::new(row.lx, row.ly),
            right_eye: Point::new(row.rx, row.ry),
        };
        if out.insert(row.image_id.clone(), ann).is_some() {
            return Err(Error::Config(format!(
                "eye sidecar lists '{}' twice",
                row.image_id
            )));
        }
    }
    Ok(out)
}

fn split_of(rel: &Path, default: Split) -> Split {
    let mut comps = rel.components();
    match (comps.next(), comps.next()) {
        (Some(Component::Normal(first)), Some(_)) => first
            .to_str()
            .and_then(|s| s.parse().ok())
            .unwrap_or(default),
        _ => default,
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Scans a raw dataset tree. Undecodable images and images without a
/// sidecar row are skipped with a warning; a class with no usable images is
/// an error.
pub fn build_manifest(root: &Path, layout: &ManifestLayout) -> Result<DatasetManifest> {
    let sidecar = read_sidecar(&root.join(&layout.sidecar))?;
    let mut candidates = Vec::new();
    for (label, dir) in [
        (Label::Positive, &layout.positive_dir),
        (Label::Negative, &layout.negative_dir),
    ] {
        let class_root = root.join(dir);
        if !class_root.is_dir() {
            return Err(Error::Config(format!(
                "missing class folder {}",
                class_root.display()
            )));
        }
        for item in WalkDir::new(&class_root).sort_by_file_name() {
            let item =
                item.map_err(|e| Error::Config(format!("walking {}: {e}", class_root.display())))?;
            let path = item.path();
            if !item.file_type().is_file() || !is_image(path) {
                continue;
            }
            let rel = path.strip_prefix(&class_root).unwrap_or(path);
            candidates.push((
                label,
                split_of(rel, layout.default_split),
                path.to_path_buf(),
            ));
        }
    }

    let checked: Vec<std::result::Result<ManifestEntry, SkippedFile>> = candidates
        .into_par_iter()
        .map(|(label, split, path)| {
            let image_id = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            if !sidecar.contains_key(&image_id) {
                return Err(SkippedFile {
                    path,
                    reason: format!("no eye annotation for '{image_id}'"),
                });
            }
            match load_rgb(&image_id, &path) {
                Ok(_) => Ok(ManifestEntry {
                    image_id,
                    path,
                    label,
                    split,
                }),
                Err(e) => Err(SkippedFile {
                    path,
                    reason: e.to_string(),
                }),
            }
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for item in checked {
        match item {
            Ok(e) => entries.push(e),
            Err(s) => {
                warn!("skipping {}: {}", s.path.display(), s.reason);
                skipped.push(s);
            }
        }
    }
    let manifest = DatasetManifest::new(ManifestKind::Raw, entries, skipped)?;
    for label in [Label::Positive, Label::Negative] {
        if manifest.class_total(label) == 0 {
            return Err(Error::Config(format!(
                "class '{}' has no usable images",
                label.class_name()
            )));
        }
    }
    Ok(manifest)
}

/// Builds the raw manifest, aligns every image into the canonical frame,
/// writes them as PNG under `out/<split>/`, and writes `out/manifest.json`.
pub fn ingest(
    root: &Path,
    out: &Path,
    layout: &ManifestLayout,
    canon: &CanonicalEyes,
) -> Result<DatasetManifest> {
    canon.validate()?;
    let raw = build_manifest(root, layout)?;
    let sidecar = read_sidecar(&root.join(&layout.sidecar))?;
    for split in Split::ALL {
        let dir = out.join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let results: Vec<std::result::Result<ManifestEntry, SkippedFile>> = raw
        .entries
        .par_iter()
        .map(|entry| {
            let aligned = load_rgb(&entry.image_id, &entry.path)
                .and_then(|img| align_face(&img, &sidecar[&entry.image_id], canon));
            let dest = out
                .join(entry.split.as_str())
                .join(format!("{}.png", entry.image_id));
            match aligned.and_then(|img| img.save(&dest).map_err(Error::from)) {
                Ok(()) => Ok(ManifestEntry {
                    path: dest,
                    ..entry.clone()
                }),
                Err(e) => Err(SkippedFile {
                    path: entry.path.clone(),
                    reason: e.to_string(),
                }),
            }
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = raw.skipped;
    for r in results {
        match r {
            Ok(e) => entries.push(e),
            Err(s) => {
                warn!("rejected {}: {}", s.path.display(), s.reason);
                skipped.push(s);
            }
        }
    }
    let manifest = DatasetManifest::new(ManifestKind::Aligned, entries, skipped)?;
    manifest.write(&out.join("manifest.json"))?;
    info!(
        "ingested {} images into {}",
        manifest.entries.len(),
        out.display()
    );
    Ok(manifest)
}
