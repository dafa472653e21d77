use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the classifier's input faces.
pub const FACE_SIZE: usize = 48;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("{width}x{height} image has no pixels")));
        }
        if pixels.len() != width * height {
            return Err(Error::Format(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

/// Luma conversion: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn rgb_to_gray(image: &RgbImage) -> GrayImage {
    let pixels = image.pixels.iter().map(|&[r, g, b]| luma(r, g, b)).collect();
    GrayImage {
        width: image.width,
        height: image.height,
        pixels,
    }
}

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    y.round().clamp(0.0, 255.0) as u8
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = ((x1 - x0) * (y1 - y0)) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }
}

/// Bilinear resample with pixel-centre alignment. Same-size resizes are exact
/// copies and constant images stay constant.
pub fn resize_bilinear(image: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::Arg(format!("cannot resize to {width}x{height}")));
    }
    let sx = image.width as f64 / width as f64;
    let sy = image.height as f64 / height as f64;
    let xs: Vec<(usize, usize, f64)> = (0..width).map(|x| taps(x, sx, image.width)).collect();
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, image.height);
        for &(x0, x1, fx) in &xs {
            let top = lerp(f64::from(image.get(x0, y0)), f64::from(image.get(x1, y0)), fx);
            let bottom = lerp(f64::from(image.get(x0, y1)), f64::from(image.get(x1, y1)), fx);
            pixels.push(lerp(top, bottom, fy).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(width, height, pixels)
}

fn taps(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, src - lo as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

pub fn crop(image: &GrayImage, region: Rect) -> Result<GrayImage> {
    if region.w == 0 || region.h == 0 || region.x + region.w > image.width || region.y + region.h > image.height {
        return Err(Error::Bounds {
            x: region.x as i64,
            y: region.y as i64,
            w: region.w as i64,
            h: region.h as i64,
            width: image.width,
            height: image.height,
        });
    }
    let mut pixels = Vec::with_capacity(region.area());
    for y in region.y..region.y + region.h {
        let start = y * image.width + region.x;
        pixels.extend_from_slice(&image.pixels[start..start + region.w]);
    }
    GrayImage::new(region.w, region.h, pixels)
}

/// Crops `region` and resamples it to the 48x48 classifier input.
pub fn crop_resize(image: &GrayImage, region: Rect) -> Result<GrayImage> {
    resize_bilinear(&crop(image, region)?, FACE_SIZE, FACE_SIZE)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn luma_reference_points() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
        assert_eq!(luma(255, 0, 0), 76);
    }

    #[test]
    fn same_size_crop_resize_is_identity() {
        let img = GrayImage::from_fn(60, 50, |x, y| ((x * 7 + y * 13) % 256) as u8).unwrap();
        let out = crop_resize(&img, Rect::new(5, 2, 48, 48)).unwrap();
        assert_eq!(out, crop(&img, Rect::new(5, 2, 48, 48)).unwrap());
    }

    #[test]
    fn out_of_bounds_region_rejected() {
        let img = GrayImage::filled(10, 10, 0).unwrap();
        assert!(matches!(crop_resize(&img, Rect::new(5, 5, 6, 2)), Err(Error::Bounds { .. })));
        assert!(matches!(crop_resize(&img, Rect::new(0, 0, 0, 2)), Err(Error::Bounds { .. })));
    }

    #[test]
    fn iou_of_identical_and_disjoint() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&Rect::new(20, 20, 5, 5)), 0.0);
        assert!((a.iou(&Rect::new(5, 0, 10, 10)) - 50.0 / 150.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bilinear_preserves_constants(w in 1usize..120, h in 1usize..120, v in any::<u8>()) {
            let img = GrayImage::filled(w, h, v).unwrap();
            let out = resize_bilinear(&img, 48, 48).unwrap();
            prop_assert!(out.pixels().iter().all(|&p| p == v));
        }

        #[test]
        fn luma_in_range(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
            let y = luma(r, g, b);
            prop_assert!(y >= r.min(g).min(b) && y <= r.max(g).max(b));
        }
    }
}
