//! Random geometric augmentation of training faces.
//!
//! Each sample gets an optional horizontal flip followed by a rotation, shift
//! and per-axis zoom about the image centre. Output pixels are bilinearly
//! sampled from the source; coordinates outside the image are clamped to the
//! nearest edge pixel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub horizontal_flip_prob: f64,
    /// Rotation drawn uniformly from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    /// Shift drawn per axis from `[-shift_fraction, shift_fraction]` of the image size.
    pub shift_fraction: f64,
    /// Zoom factor drawn per axis from `[1 - zoom_fraction, 1 + zoom_fraction]`.
    pub zoom_fraction: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            horizontal_flip_prob: 0.5,
            rotation_degrees: 10.0,
            shift_fraction: 0.1,
            zoom_fraction: 0.1,
        }
    }
}

impl AugmentPolicy {
    /// A policy that never changes the image.
    pub fn identity() -> Self {
        Self {
            horizontal_flip_prob: 0.0,
            rotation_degrees: 0.0,
            shift_fraction: 0.0,
            zoom_fraction: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.horizontal_flip_prob)
            && [self.rotation_degrees, self.shift_fraction, self.zoom_fraction]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0)
            && self.zoom_fraction < 1.0
    }

    /// Draws one concrete transform.
    pub fn sample<R: Rng + ?Sized>(&self, width: usize, height: usize, rng: &mut R) -> Transform {
        let flip = self.horizontal_flip_prob > 0.0 && rng.random::<f64>() < self.horizontal_flip_prob;
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        Transform {
            flip,
            rotation_degrees: sym(rng, self.rotation_degrees),
            shift_x: sym(rng, self.shift_fraction) * width as f64,
            shift_y: sym(rng, self.shift_fraction) * height as f64,
            zoom_x: 1.0 + sym(rng, self.zoom_fraction),
            zoom_y: 1.0 + sym(rng, self.zoom_fraction),
        }
    }
}

/// A concrete augmentation. Shifts are in pixels; positive values move content
/// right/down. Zoom above 1 enlarges content.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub flip: bool,
    pub rotation_degrees: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub zoom_x: f64,
    pub zoom_y: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self {
            flip: false,
            rotation_degrees: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            zoom_x: 1.0,
            zoom_y: 1.0,
        }
    }
}

impl Transform {
    pub fn is_identity(&self) -> bool {
        *self == Transform::default()
    }

    pub fn apply(&self, image: &GrayImage) -> GrayImage {
        if self.is_identity() {
            return image.clone();
        }
        let (w, h) = (image.width(), image.height());
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = self.rotation_degrees.to_radians().sin_cos();
        GrayImage::from_fn(w, h, |x, y| {
            // Inverse map: undo shift, rotation, zoom, then the flip.
            let dx = x as f64 - cx - self.shift_x;
            let dy = y as f64 - cy - self.shift_y;
            let rx = (cos * dx + sin * dy) / self.zoom_x;
            let ry = (-sin * dx + cos * dy) / self.zoom_y;
            let mut sx = rx + cx;
            let sy = ry + cy;
            if self.flip {
                sx = w as f64 - 1.0 - sx;
            }
            sample_clamped(image, sx, sy)
        })
        .expect("same dimensions as a valid image")
    }
}

fn sample_clamped(image: &GrayImage, x: f64, y: f64) -> u8 {
    let x = x.clamp(0.0, (image.width() - 1) as f64);
    let y = y.clamp(0.0, (image.height() - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(image.width() - 1), (y0 + 1).min(image.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |x, y| f64::from(image.get(x, y));
    let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
    let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
    (top + (bottom - top) * fy).round().clamp(0.0, 255.0) as u8
}

/// Applies a freshly drawn transform; the label is untouched.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, policy: &AugmentPolicy, rng: &mut R) -> Sample {
    let t = policy.sample(sample.image.width(), sample.image.height(), rng);
    Sample {
        image: t.apply(&sample.image),
        label: sample.label,
    }
}
