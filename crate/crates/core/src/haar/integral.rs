use crate::data::{GrayImage, Rect};

/// Summed-area tables of pixel values and squared pixel values.
///
/// Entry `(x, y)` holds the sum over pixels strictly above and to the left, so
/// both tables are `(width + 1) x (height + 1)` with a zero first row and column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<i64>,
    sqsum: Vec<i64>,
}

impl IntegralImage {
    pub fn new(image: &GrayImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let stride = w + 1;
        let mut sum = vec![0i64; stride * (h + 1)];
        let mut sqsum = vec![0i64; stride * (h + 1)];
        for y in 0..h {
            let (mut row, mut row_sq) = (0i64, 0i64);
            for x in 0..w {
                let p = i64::from(image.get(x, y));
                row += p;
                row_sq += p * p;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sqsum[i] = sqsum[i - stride] + row_sq;
            }
        }
        Self { width: w, height: h, sum, sqsum }
    }

    /// Width of the source image.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Table entry at corner `(x, y)`, `x <= width`, `y <= height`.
    pub fn at(&self, x: usize, y: usize) -> i64 {
        self.sum[y * (self.width + 1) + x]
    }

    pub fn sq_at(&self, x: usize, y: usize) -> i64 {
        self.sqsum[y * (self.width + 1) + x]
    }

    fn corners(table: &[i64], stride: usize, r: &Rect) -> i64 {
        let (x1, y1) = (r.x + r.w, r.y + r.h);
        table[y1 * stride + x1] - table[r.y * stride + x1] - table[y1 * stride + r.x] + table[r.y * stride + r.x]
    }

    fn check(&self, r: &Rect) {
        assert!(
            r.x + r.w <= self.width && r.y + r.h <= self.height,
            "rect {r:?} outside {}x{} integral image",
            self.width,
            self.height
        );
    }

    /// Pixel sum over `r`. Panics if `r` leaves the image.
    pub fn rect_sum(&self, r: &Rect) -> i64 {
        self.check(r);
        Self::corners(&self.sum, self.width + 1, r)
    }

    /// Squared-pixel sum over `r`. Panics if `r` leaves the image.
    pub fn rect_sqsum(&self, r: &Rect) -> i64 {
        self.check(r);
        Self::corners(&self.sqsum, self.width + 1, r)
    }
}

pub fn integral(image: &GrayImage) -> IntegralImage {
    IntegralImage::new(image)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn all_ones_corner() {
        let ii = integral(&GrayImage::filled(4, 4, 1).unwrap());
        assert_eq!(ii.at(4, 4), 16);
        assert_eq!(ii.sq_at(4, 4), 16);
        assert!((0..=4).all(|i| ii.at(i, 0) == 0 && ii.at(0, i) == 0));
    }

    #[test]
    fn empty_rect_is_zero() {
        let ii = integral(&GrayImage::filled(5, 3, 200).unwrap());
        assert_eq!(ii.rect_sum(&Rect::new(2, 1, 0, 2)), 0);
        assert_eq!(ii.rect_sum(&Rect::new(5, 3, 0, 0)), 0);
    }

    #[test]
    fn random_rects_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (37, 29);
        let img = GrayImage::from_fn(w, h, |x, y| ((x * 31 + y * 17 + x * y) % 256) as u8).unwrap();
        let ii = integral(&img);
        for _ in 0..1000 {
            let x = rng.random_range(0..=w);
            let y = rng.random_range(0..=h);
            let r = Rect::new(x, y, rng.random_range(0..=w - x), rng.random_range(0..=h - y));
            let mut s = 0i64;
            let mut sq = 0i64;
            for yy in r.y..r.y + r.h {
                for xx in r.x..r.x + r.w {
                    let p = i64::from(img.get(xx, yy));
                    s += p;
                    sq += p * p;
                }
            }
            assert_eq!(ii.rect_sum(&r), s);
            assert_eq!(ii.rect_sqsum(&r), sq);
        }
    }
}
