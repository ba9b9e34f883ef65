use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::EyeAnnotation;
use crate::error::{Error, Result};
use crate::{FRAME_HEIGHT, FRAME_WIDTH};

/// Minimum eye separation, in source pixels, for a usable annotation.
pub const MIN_EYE_DISTANCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Target eye positions in the 150×130 canonical frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEyes {
    pub left: Point,
    pub right: Point,
}

impl Default for CanonicalEyes {
    fn default() -> Self {
        CanonicalEyes {
            left: Point::new(37.5, 60.0),
            right: Point::new(92.5, 60.0),
        }
    }
}

impl CanonicalEyes {
    /// Parses `"lx,ly,rx,ry"`.
    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("canonical eyes '{text}': {e}")))?;
        let [lx, ly, rx, ry] = values[..] else {
            return Err(Error::Config(format!(
                "canonical eyes need four comma-separated numbers, got '{text}'"
            )));
        };
        let canon = CanonicalEyes {
            left: Point::new(lx, ly),
            right: Point::new(rx, ry),
        };
        canon.validate()?;
        Ok(canon)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.left, self.right] {
            let inside = (0.0..=FRAME_WIDTH as f64).contains(&p.x)
                && (0.0..=FRAME_HEIGHT as f64).contains(&p.y);
            if !inside {
                return Err(Error::Config(format!(
                    "canonical eye ({}, {}) outside the {FRAME_HEIGHT}x{FRAME_WIDTH} frame",
                    p.x, p.y
                )));
            }
        }
        if self.left.x >= self.right.x {
            return Err(Error::Config(
                "canonical left eye must be left of the right eye".into(),
            ));
        }
        Ok(())
    }
}

/// Rotation + uniform scale + translation:
/// `x' = a·x − b·y + tx`, `y' = b·x + a·y + ty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// The unique similarity sending `src[0]→dst[0]` and `src[1]→dst[1]`.
    /// Treats points as complex numbers: `(a + ib) = Δdst / Δsrc`.
    pub fn from_point_pairs(src: [Point; 2], dst: [Point; 2]) -> Option<Self> {
        let (sx, sy) = (src[1].x - src[0].x, src[1].y - src[0].y);
        let (dx, dy) = (dst[1].x - dst[0].x, dst[1].y - dst[0].y);
        let denom = sx * sx + sy * sy;
        if denom == 0.0 {
            return None;
        }
        let a = (dx * sx + dy * sy) / denom;
        let b = (dy * sx - dx * sy) / denom;
        let tx = dst[0].x - (a * src[0].x - b * src[0].y);
        let ty = dst[0].y - (b * src[0].x + a * src[0].y);
        Some(SimilarityTransform { a, b, tx, ty })
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x - self.b * p.y + self.tx,
            self.b * p.x + self.a * p.y + self.ty,
        )
    }

    pub fn apply_inverse(&self, p: Point) -> Point {
        let det = self.a * self.a + self.b * self.b;
        let (u, v) = (p.x - self.tx, p.y - self.ty);
        Point::new(
            (self.a * u + self.b * v) / det,
            (self.a * v - self.b * u) / det,
        )
    }
}

/// Warps `raw` so the annotated eyes land on the canonical positions, and
/// crops to 150×130. Bilinear resampling; pixels mapping outside the source
/// are 0.
pub fn align_face(raw: &RgbImage, ann: &EyeAnnotation, canon: &CanonicalEyes) -> Result<RgbImage> {
    let (w, h) = raw.dimensions();
    ann.validate(w, h)?;
    canon.validate()?;
    let eye_distance = ann.left_eye.distance(&ann.right_eye);
    if eye_distance < MIN_EYE_DISTANCE {
        return Err(Error::Annotation {
            image_id: ann.image_id.clone(),
            reason: format!(
                "degenerate annotation: eye distance {eye_distance:.3} px < {MIN_EYE_DISTANCE} px"
            ),
        });
    }
    let transform = SimilarityTransform::from_point_pairs(
        [ann.left_eye, ann.right_eye],
        [canon.left, canon.right],
    )
    .ok_or_else(|| Error::Annotation {
        image_id: ann.image_id.clone(),
        reason: "coincident eye landmarks".into(),
    })?;
    Ok(warp(raw, &transform))
}

fn warp(raw: &RgbImage, transform: &SimilarityTransform) -> RgbImage {
    RgbImage::from_fn(FRAME_WIDTH as u32, FRAME_HEIGHT as u32, |col, row| {
        let dst = Point::new(col as f64 + 0.5, row as f64 + 0.5);
        let src = transform.apply_inverse(dst);
        sample_bilinear(raw, src.x - 0.5, src.y - 0.5)
    })
}

/// Samples at continuous index coordinates (`u` column, `v` row), where
/// integer values hit pixel centers exactly.
fn sample_bilinear(img: &RgbImage, u: f64, v: f64) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    let max_u = (w - 1) as f64;
    let max_v = (h - 1) as f64;
    if !(0.0..=max_u).contains(&u) || !(0.0..=max_v).contains(&v) {
        return Rgb([0, 0, 0]);
    }
    let (x0, y0) = (u.floor() as u32, v.floor() as u32);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (p00, p01) = (img.get_pixel(x0, y0), img.get_pixel(x1, y0));
    let (p10, p11) = (img.get_pixel(x0, y1), img.get_pixel(x1, y1));
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
        let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}
