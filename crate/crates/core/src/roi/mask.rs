use image::RgbImage;

use super::{PatchConfig, RoiSpec, Scale};
use crate::error::{Error, Result};
use crate::{FRAME_HEIGHT, FRAME_WIDTH};

/// Binary pixel mask, row-major, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(row, col) as u8);
            }
        }
        Mask {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Pixelwise `self <= other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bits.iter().zip(&other.bits).all(|(a, b)| a <= b)
    }

    pub fn flipped_horizontal(&self) -> Mask {
        Mask::from_fn(self.height, self.width, |r, c| {
            self.get(r, self.width - 1 - c) == 1
        })
    }

    fn fill_rect(&mut self, rect: &super::Rect) {
        for row in rect.top as usize..rect.bottom() as usize {
            let start = row * self.width;
            self.bits[start + rect.left as usize..start + rect.right() as usize].fill(1);
        }
    }
}

/// Union of the configuration's rectangles at `scale`; FULL_FACE is all ones.
pub fn build_mask(spec: &RoiSpec, config: &PatchConfig, scale: Scale) -> Mask {
    match config {
        PatchConfig::FullFace => Mask::ones(FRAME_HEIGHT, FRAME_WIDTH),
        PatchConfig::Regions(set) => {
            let mut mask = Mask::zeros(FRAME_HEIGHT, FRAME_WIDTH);
            for region in set.iter() {
                mask.fill_rect(&spec.rect(region, scale));
            }
            mask
        }
    }
}

/// Zeroes every pixel outside the mask, in raw 8-bit space. The mask is
/// broadcast across channels.
pub fn apply_mask(img: &RgbImage, mask: &Mask) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if h as usize != mask.height || w as usize != mask.width {
        return Err(Error::Shape {
            expected: format!("{}x{} image", mask.height, mask.width),
            actual: format!("{h}x{w} image"),
        });
    }
    let mut out = img.clone();
    for (px, &keep) in out.chunks_exact_mut(3).zip(&mask.bits) {
        if keep == 0 {
            px.fill(0);
        }
    }
    Ok(out)
}
