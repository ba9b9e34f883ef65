//! Patch-based facial image classification.
//!
//! The pipeline:
//!
//! 1. [`ingest`]: align raw faces to a 150×130 canonical frame from two eye
//!    landmarks and record them in a dataset manifest (or generate a
//!    synthetic fixture with a planted regional signal).
//! 2. [`roi`]: zero out everything except the chosen facial regions
//!    (forehead, nose, left/right cheek) at one of three nested scales.
//! 3. [`model`]: fine-tune an 18-layer residual network with a single-logit
//!    head under BCE-with-logits, momentum SGD and step decay, keeping the
//!    best-validation-accuracy checkpoint.
//! 4. [`eval`]: confusion metrics, ROC curves, trapezoid AUC, SVG plots.
//! 5. [`grid`]: run every (configuration, scale) cell and summarize.

pub mod error;
pub mod eval;
pub mod fsutil;
pub mod grid;
pub mod ingest;
pub mod model;
pub mod roi;

pub use error::{Error, Result};

/// Canonical frame height in pixels.
pub const FRAME_HEIGHT: usize = 150;
/// Canonical frame width in pixels.
pub const FRAME_WIDTH: usize = 130;
