#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::RgbImage;
use patchlab::ingest::{generate_fixture, ClassCounts, FixtureSpec};
use patchlab::roi::{Rect, Region, RoiSpec, Scale};
use patchlab::{FRAME_HEIGHT, FRAME_WIDTH};
use rand::Rng;

pub const H: u32 = FRAME_HEIGHT as u32;
pub const W: u32 = FRAME_WIDTH as u32;

fn random_rect_inside(rng: &mut impl Rng, outer: Rect) -> Rect {
    let height = rng.random_range(1..=outer.height);
    let width = rng.random_range(1..=outer.width);
    let top = outer.top + rng.random_range(0..=outer.height - height);
    let left = outer.left + rng.random_range(0..=outer.width - width);
    Rect::new(top, left, height, width)
}

/// Random valid spec: arbitrary (possibly overlapping) large rectangles
/// with medium and small nested inside.
pub fn random_roi_spec(rng: &mut impl Rng) -> RoiSpec {
    let frame = Rect::new(0, 0, H, W);
    let mut cells = Vec::new();
    for region in Region::ALL {
        let large = random_rect_inside(rng, frame);
        let medium = random_rect_inside(rng, large);
        let small = random_rect_inside(rng, medium);
        cells.push((region, Scale::Large, large));
        cells.push((region, Scale::Medium, medium));
        cells.push((region, Scale::Small, small));
    }
    RoiSpec::new(cells).expect("nested in-frame rectangles are valid")
}

pub fn random_image(rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(W, H, |_, _| {
        image::Rgb([rng.random(), rng.random(), rng.random()])
    })
}

pub fn counts(positive: usize, negative: usize) -> ClassCounts {
    ClassCounts { positive, negative }
}

/// Fixture with the default cheek signal and the given per-split counts
/// (same count for both classes). Returns the manifest path.
pub fn fixture(out: &Path, train: usize, val: usize, test: usize, seed: u64) -> PathBuf {
    let spec = FixtureSpec {
        seed,
        train: counts(train, train),
        val: counts(val, val),
        test: counts(test, test),
        ..FixtureSpec::default()
    };
    generate_fixture(&spec, &RoiSpec::default(), out).expect("fixture");
    out.join("manifest.json")
}
