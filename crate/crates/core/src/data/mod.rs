//! Samples, datasets, image I/O, preprocessing and augmentation.

mod augment;
mod fer;
mod image;
mod label;
mod pnm;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, AugmentPolicy, Transform};
pub use fer::{load_fer_csv, parse_fer_csv, write_fer_csv, FerSplits, Usage};
pub use image::{crop, crop_resize, luma, resize_bilinear, rgb_to_gray, GrayImage, Rect, RgbImage, FACE_SIZE};
pub use label::{class_names, EmotionLabel, NUM_CLASSES};
pub use pnm::{decode as decode_pnm, encode_pgm, encode_ppm, read_pgm, write_pgm, Pnm};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: EmotionLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Validation,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(split: Split, samples: Vec<Sample>) -> Self {
        Self { split, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.index()).collect()
    }

    /// First `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset::new(self.split, self.samples.iter().take(n).cloned().collect())
    }

    /// Seeded shuffle, then the last `fraction` of samples becomes a
    /// validation set.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::Arg(format!("holdout fraction {fraction} must be in (0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64) * fraction).round() as usize;
        if n_val == 0 || n_val == self.len() {
            return Err(Error::Data(format!(
                "holdout of {fraction} leaves an empty split of {} samples",
                self.len()
            )));
        }
        let pick = |idx: &[usize], split| Dataset::new(split, idx.iter().map(|&i| self.samples[i].clone()).collect());
        let (keep, val) = order.split_at(self.len() - n_val);
        Ok((pick(keep, self.split), pick(val, Split::Validation)))
    }
}

/// Stacks 48x48 images into an `[N, 48, 48, 1]` tensor of raw byte values.
pub fn images_to_batch<'a, T: Scalar>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if (img.width(), img.height()) != (FACE_SIZE, FACE_SIZE) {
            return Err(Error::shape(format!(
                "classifier input must be {FACE_SIZE}x{FACE_SIZE}, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        data.extend(img.pixels().iter().map(|&p| T::from_f64_lossy(f64::from(p))));
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("cannot build an empty batch".into()));
    }
    Tensor::new(vec![n, FACE_SIZE, FACE_SIZE, 1], data)
}
