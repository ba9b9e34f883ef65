use candle_core::{Device, Tensor};
use image::RgbImage;
use rayon::prelude::*;

use super::Normalization;
use crate::error::{Error, Result};
use crate::ingest::{AlignedImage, DatasetManifest, Label, Split};
use crate::roi::{apply_mask, Mask};
use crate::{FRAME_HEIGHT, FRAME_WIDTH};

/// One split, masked and normalized, held as a single NCHW tensor.
pub struct SplitTensors {
    pub image_ids: Vec<String>,
    pub labels: Vec<Label>,
    /// `(N, 3, 150, 130)` f32.
    pub images: Tensor,
    /// `(N, 1)` f32 in {0, 1}.
    pub targets: Tensor,
}

impl SplitTensors {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&Label::Positive) && self.labels.contains(&Label::Negative)
    }
}

/// Masks in raw 8-bit space, then scales to [0, 1] and normalizes per
/// channel. Returns CHW-ordered values.
pub fn masked_chw(img: &RgbImage, mask: &Mask, norm: &Normalization) -> Result<Vec<f32>> {
    let masked = apply_mask(img, mask)?;
    let plane = FRAME_HEIGHT * FRAME_WIDTH;
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in masked.as_raw().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = (px[c] as f32 / 255.0 - norm.mean[c]) / norm.std[c];
        }
    }
    Ok(out)
}

pub fn stack_images(
    images: &[AlignedImage],
    mask: &Mask,
    norm: &Normalization,
    device: &Device,
) -> Result<SplitTensors> {
    let planes = images
        .par_iter()
        .map(|img| masked_chw(&img.pixels, mask, norm))
        .collect::<Result<Vec<_>>>()?;
    let n = images.len();
    let flat: Vec<f32> = planes.into_iter().flatten().collect();
    let labels: Vec<Label> = images.iter().map(|i| i.label).collect();
    let targets: Vec<f32> = labels.iter().map(|l| l.as_f32()).collect();
    Ok(SplitTensors {
        image_ids: images.iter().map(|i| i.image_id.clone()).collect(),
        labels,
        images: Tensor::from_vec(flat, (n, 3, FRAME_HEIGHT, FRAME_WIDTH), device)?,
        targets: Tensor::from_vec(targets, (n, 1), device)?,
    })
}

/// Loads every manifest entry of `split` (manifest order), masked and
/// normalized.
pub fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    mask: &Mask,
    norm: &Normalization,
    device: &Device,
) -> Result<SplitTensors> {
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::Config(format!("split '{split}' is empty")));
    }
    let images = entries
        .par_iter()
        .map(|e| AlignedImage::load(e))
        .collect::<Result<Vec<_>>>()?;
    stack_images(&images, mask, norm, device)
}
