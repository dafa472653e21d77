use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cascade::CascadeModel;
use super::integral::IntegralImage;
use crate::data::{GrayImage, Rect};
use crate::error::{Error, Result};

/// Round half up, the rounding used for every scaled coordinate.
pub fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

/// A grouped detection in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    /// Number of raw windows merged into this box.
    pub neighbors: usize,
}

impl DetectionBox {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowResult {
    Accepted,
    Rejected { stage: usize },
}

impl WindowResult {
    pub fn accepted(self) -> bool {
        self == WindowResult::Accepted
    }
}

struct ScaledFeature {
    rects: Vec<(Rect, f64)>,
}

/// A cascade with every rectangle resolved for one scale, relative to the
/// window origin.
pub struct ScaledCascade<'a> {
    cascade: &'a CascadeModel,
    window: (usize, usize),
    norm: Rect,
    features: Vec<ScaledFeature>,
}

impl<'a> ScaledCascade<'a> {
    /// Each rectangle coordinate is scaled and rounded half up, then clipped to
    /// the scaled window. The first rectangle's weight is recomputed so the
    /// weighted areas still cancel after rounding. Variance normalisation uses
    /// the window inset by one base pixel on every side.
    pub fn new(cascade: &'a CascadeModel, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 1.0) {
            return Err(Error::Arg(format!("window scale must be finite and at least 1, got {scale}")));
        }
        let (bw, bh) = cascade.window();
        let window = (round_half_up(bw as f64 * scale), round_half_up(bh as f64 * scale));
        let clip = |x: usize, w: usize, limit: usize| {
            let x = x.min(limit);
            (x, w.min(limit - x))
        };
        let (nx, nw) = clip(round_half_up(scale), round_half_up((bw - 2) as f64 * scale), window.0);
        let (ny, nh) = clip(round_half_up(scale), round_half_up((bh - 2) as f64 * scale), window.1);
        let features = cascade
            .features()
            .iter()
            .map(|f| {
                let mut rects: Vec<(Rect, f64)> = f
                    .rects
                    .iter()
                    .map(|r| {
                        let (x, w) = clip(round_half_up(r.x as f64 * scale), round_half_up(r.w as f64 * scale), window.0);
                        let (y, h) = clip(round_half_up(r.y as f64 * scale), round_half_up(r.h as f64 * scale), window.1);
                        (Rect::new(x, y, w, h), r.weight)
                    })
                    .collect();
                let area0 = rects[0].0.area();
                if area0 > 0 {
                    let rest: f64 = rects[1..].iter().map(|(r, w)| w * r.area() as f64).sum();
                    rects[0].1 = -rest / area0 as f64;
                }
                ScaledFeature { rects }
            })
            .collect();
        Ok(Self {
            cascade,
            window,
            norm: Rect::new(nx, ny, nw, nh),
            features,
        })
    }

    /// Scaled window `(width, height)`.
    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    fn fits(&self, ii: &IntegralImage, x: usize, y: usize) -> bool {
        x + self.window.0 <= ii.width() && y + self.window.1 <= ii.height()
    }

    /// Runs the cascade on the window whose top-left corner is `(x, y)`.
    pub fn evaluate(&self, ii: &IntegralImage, x: usize, y: usize) -> Result<WindowResult> {
        if !self.fits(ii, x, y) {
            return Err(Error::Bounds {
                x: x as i64,
                y: y as i64,
                w: self.window.0 as i64,
                h: self.window.1 as i64,
                width: ii.width(),
                height: ii.height(),
            });
        }
        Ok(self.evaluate_unchecked(ii, x, y))
    }

    fn evaluate_unchecked(&self, ii: &IntegralImage, x: usize, y: usize) -> WindowResult {
        let at = |r: &Rect| Rect::new(x + r.x, y + r.y, r.w, r.h);
        let norm = at(&self.norm);
        let area = norm.area() as i128;
        let (s, sq) = (i128::from(ii.rect_sum(&norm)), i128::from(ii.rect_sqsum(&norm)));
        let var = area * sq - s * s;
        let nf = if var > 0 { (var as f64).sqrt() } else { area as f64 };

        for (si, stage) in self.cascade.stages().iter().enumerate() {
            let mut total = 0.0;
            for c in &stage.classifiers {
                total += c.eval(|feature, threshold| {
                    let value: f64 = self.features[feature]
                        .rects
                        .iter()
                        .map(|(r, w)| w * ii.rect_sum(&at(r)) as f64)
                        .sum();
                    value < threshold * nf
                });
            }
            if total < stage.threshold {
                return WindowResult::Rejected { stage: si };
            }
        }
        WindowResult::Accepted
    }
}

/// Evaluates one window at `origin` with rectangles scaled by `scale`.
pub fn evaluate_window(cascade: &CascadeModel, ii: &IntegralImage, origin: (usize, usize), scale: f64) -> Result<WindowResult> {
    ScaledCascade::new(cascade, scale)?.evaluate(ii, origin.0, origin.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    /// Smallest window `(width, height)` scanned.
    pub min_size: (usize, usize),
    /// Grouping tolerance, relative to rectangle size.
    pub eps: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            min_neighbors: 3,
            min_size: (24, 24),
            eps: 0.2,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor.is_finite() && self.scale_factor > 1.0) {
            return Err(Error::Arg(format!("scale factor must be greater than 1, got {}", self.scale_factor)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Arg(format!("grouping eps must be non-negative, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Scales `f^k` whose scaled window fits an image of the given size and is at
/// least `min_size`.
pub fn scan_scales(cascade: &CascadeModel, width: usize, height: usize, params: &DetectParams) -> Result<Vec<f64>> {
    params.validate()?;
    let (bw, bh) = cascade.window();
    let mut scales = Vec::new();
    for k in 0.. {
        let s = params.scale_factor.powi(k);
        let (ww, wh) = (round_half_up(bw as f64 * s), round_half_up(bh as f64 * s));
        if ww > width || wh > height {
            break;
        }
        if ww >= params.min_size.0 && wh >= params.min_size.1 {
            scales.push(s);
        }
    }
    Ok(scales)
}

/// Window step at a scale: `max(1, round(2s))`.
pub fn window_step(scale: f64) -> usize {
    round_half_up(2.0 * scale).max(1)
}

/// All windows accepted by the cascade, before grouping, in scan order
/// (scale, then row, then column).
pub fn raw_candidates(cascade: &CascadeModel, ii: &IntegralImage, params: &DetectParams) -> Result<Vec<Rect>> {
    let scales = scan_scales(cascade, ii.width(), ii.height(), params)?;
    let per_scale: Vec<Vec<Rect>> = scales
        .par_iter()
        .map(|&s| -> Result<Vec<Rect>> {
            let sc = ScaledCascade::new(cascade, s)?;
            let (ww, wh) = sc.window();
            let step = window_step(s);
            let mut hits = Vec::new();
            for y in (0..=ii.height() - wh).step_by(step) {
                for x in (0..=ii.width() - ww).step_by(step) {
                    if sc.evaluate_unchecked(ii, x, y).accepted() {
                        hits.push(Rect::new(x, y, ww, wh));
                    }
                }
            }
            Ok(hits)
        })
        .collect::<Result<_>>()?;
    Ok(per_scale.concat())
}

/// Multiscale sliding-window detection followed by grouping. Boxes are
/// clipped to the image and sorted by `(y, x)`.
pub fn detect_multiscale(cascade: &CascadeModel, image: &GrayImage, params: &DetectParams) -> Result<Vec<DetectionBox>> {
    params.validate()?;
    let ii = IntegralImage::new(image);
    let raw = raw_candidates(cascade, &ii, params)?;
    let mut boxes: Vec<DetectionBox> = group_rectangles(&raw, params.min_neighbors, params.eps)
        .into_iter()
        .filter_map(|mut b| {
            b.x = b.x.min(image.width());
            b.y = b.y.min(image.height());
            b.w = b.w.min(image.width() - b.x);
            b.h = b.h.min(image.height() - b.y);
            (b.w > 0 && b.h > 0).then_some(b)
        })
        .collect();
    boxes.sort_by_key(|b| (b.y, b.x, b.w, b.h, b.neighbors));
    Ok(boxes)
}

fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) + a.h.min(b.h)) as f64 / 2.0;
    let close = |p: usize, q: usize| (p as f64 - q as f64).abs() <= delta;
    close(a.x, b.x) && close(a.y, b.y) && close(a.x + a.w, b.x + b.w) && close(a.y + a.h, b.y + b.h)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Clusters rectangles whose edges all lie within `eps * mean(min w, min h)`
/// of each other (transitively), and emits each cluster's rounded average with
/// its size as the neighbor count. Clusters smaller than
/// `max(1, min_neighbors)` are dropped. Output is sorted by `(y, x)`.
pub fn group_rectangles(candidates: &[Rect], min_neighbors: usize, eps: f64) -> Vec<DetectionBox> {
    let eps = eps.max(0.0);
    let n = candidates.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similar(&candidates[i], &candidates[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut sums: std::collections::BTreeMap<usize, [usize; 5]> = Default::default();
    for (i, r) in candidates.iter().enumerate() {
        let root = find(&mut parent, i);
        let e = sums.entry(root).or_default();
        e[0] += r.x;
        e[1] += r.y;
        e[2] += r.w;
        e[3] += r.h;
        e[4] += 1;
    }
    let avg = |sum: usize, n: usize| (2 * sum + n) / (2 * n);
    let mut out: Vec<DetectionBox> = sums
        .into_values()
        .filter(|e| e[4] >= min_neighbors.max(1))
        .map(|[x, y, w, h, n]| DetectionBox {
            x: avg(x, n),
            y: avg(y, n),
            w: avg(w, n),
            h: avg(h, n),
            neighbors: n,
        })
        .collect();
    out.sort_by_key(|b| (b.y, b.x, b.w, b.h, b.neighbors));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::cascade::{HaarFeature, HaarRect, Stage, WeakClassifier};

    fn feature() -> HaarFeature {
        HaarFeature {
            rects: vec![
                HaarRect { x: 0, y: 0, w: 4, h: 4, weight: -1.0 },
                HaarRect { x: 0, y: 0, w: 2, h: 4, weight: 2.0 },
            ],
        }
    }

    fn cascade(stage_threshold: f64) -> CascadeModel {
        CascadeModel::new(
            (4, 4),
            vec![Stage {
                classifiers: vec![WeakClassifier::stump(0, 0.0, 1.0, 1.0)],
                threshold: stage_threshold,
            }],
            vec![feature()],
        )
        .unwrap()
    }

    #[test]
    fn constant_image_always_pass() {
        let ii = IntegralImage::new(&GrayImage::filled(8, 8, 77).unwrap());
        assert_eq!(evaluate_window(&cascade(0.5), &ii, (2, 3), 1.0).unwrap(), WindowResult::Accepted);
    }

    #[test]
    fn infinite_threshold_rejects_at_stage_zero() {
        let ii = IntegralImage::new(&GrayImage::filled(8, 8, 77).unwrap());
        assert_eq!(
            evaluate_window(&cascade(f64::INFINITY), &ii, (0, 0), 1.0).unwrap(),
            WindowResult::Rejected { stage: 0 }
        );
    }

    #[test]
    fn window_outside_image() {
        let ii = IntegralImage::new(&GrayImage::filled(8, 8, 0).unwrap());
        assert!(matches!(evaluate_window(&cascade(0.0), &ii, (5, 0), 1.0), Err(Error::Bounds { .. })));
        assert!(matches!(evaluate_window(&cascade(0.0), &ii, (0, 0), 2.5), Err(Error::Bounds { .. })));
    }

    #[test]
    fn scale_factor_must_exceed_one() {
        let img = GrayImage::filled(8, 8, 0).unwrap();
        let params = DetectParams { scale_factor: 1.0, ..DetectParams::default() };
        assert!(matches!(detect_multiscale(&cascade(0.0), &img, &params), Err(Error::Arg(_))));
    }

    #[test]
    fn single_rect_grouping() {
        let r = Rect::new(3, 4, 10, 10);
        assert_eq!(
            group_rectangles(&[r], 0, 0.2),
            vec![DetectionBox { x: 3, y: 4, w: 10, h: 10, neighbors: 1 }]
        );
        assert!(group_rectangles(&[r], 3, 0.2).is_empty());
    }

    #[test]
    fn three_close_one_far() {
        let rects = [
            Rect::new(10, 10, 20, 20),
            Rect::new(11, 10, 20, 20),
            Rect::new(10, 12, 21, 21),
            Rect::new(60, 60, 20, 20),
        ];
        assert_eq!(
            group_rectangles(&rects, 2, 0.2),
            vec![DetectionBox { x: 10, y: 11, w: 20, h: 20, neighbors: 3 }]
        );
    }

    #[test]
    fn step_and_rounding() {
        assert_eq!(window_step(1.0), 2);
        assert_eq!(window_step(1.1), 2);
        assert_eq!(window_step(1.25), 3);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(26.4), 26);
    }
}
