//! Viola-Jones face detection with OpenCV-format Haar cascades.

mod cascade;
mod detect;
mod integral;

use std::path::Path;

pub use cascade::{parse_cascade_xml, CascadeModel, Child, HaarFeature, HaarRect, Stage, TreeNode, WeakClassifier};
pub use detect::{
    detect_multiscale, evaluate_window, group_rectangles, raw_candidates, round_half_up, scan_scales, window_step,
    DetectParams, DetectionBox, ScaledCascade, WindowResult,
};
pub use integral::{integral, IntegralImage};

use crate::error::{Error, Result};

/// Reads and parses a cascade file.
pub fn load_cascade(path: impl AsRef<Path>) -> Result<CascadeModel> {
    let path = path.as_ref();
    let xml = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cascade_xml(&xml)
}
