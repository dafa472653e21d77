#![allow(dead_code)]

use fer_core::data::{Dataset, EmotionLabel, GrayImage, Sample, Split, Usage};
use fer_core::haar::{CascadeModel, Child, HaarFeature, HaarRect, Stage, TreeNode, WeakClassifier};
use fer_core::nn::{Network, OutputGrad};
use fer_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ASSETS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/assets");

pub fn asset(name: &str) -> String {
    format!("{ASSETS}/{name}")
}

/// Hand-marked face in `astronaut_face.pgm`.
pub const ASTRONAUT_FACE: (usize, usize, usize, usize) = (46, 30, 52, 54);

/// 48x48 faces whose class is a bright square at a class-specific position
/// over a noisy background.
pub fn synthetic_dataset(n: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = EmotionLabel::from_index(i % 7).unwrap();
            let (cx, cy) = (6 + (label.index() % 4) * 11, 8 + (label.index() / 4) * 20);
            let noise: Vec<u8> = (0..48 * 48).map(|_| rng.random_range(0..90)).collect();
            let image = GrayImage::from_fn(48, 48, |x, y| {
                let inside = (cx..cx + 10).contains(&x) && (cy..cy + 12).contains(&y);
                if inside { 230 } else { noise[y * 48 + x] }
            })
            .unwrap();
            Sample { image, label }
        })
        .collect();
    Dataset::new(split, samples)
}

/// A FER-style CSV with the given number of rows per usage.
pub fn fer_csv(train: usize, public: usize, private: usize, seed: u64) -> String {
    let mut rows: Vec<(Sample, Usage)> = Vec::new();
    for (n, usage, s) in [(train, Usage::Training, seed), (public, Usage::PublicTest, seed + 1), (private, Usage::PrivateTest, seed + 2)] {
        for sample in synthetic_dataset(n, s, Split::Train).samples {
            rows.push((sample, usage));
        }
    }
    let mut out = Vec::new();
    fer_core::data::write_fer_csv(&mut out, rows.iter().map(|(s, u)| (s, *u))).unwrap();
    String::from_utf8(out).unwrap()
}

pub fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..w * h).map(|_| rng.random()).collect();
    GrayImage::new(w, h, px).unwrap()
}

fn stump_tree(feature: usize, threshold: f64, left: f64, right: f64) -> WeakClassifier {
    WeakClassifier::stump(feature, threshold, left, right)
}

/// A cascade whose single stage passes every window.
pub fn always_accept(window: usize) -> CascadeModel {
    let feature = HaarFeature {
        rects: vec![
            HaarRect { x: 0, y: 0, w: window, h: window, weight: -1.0 },
            HaarRect { x: 0, y: 0, w: window / 2, h: window, weight: 2.0 },
        ],
    };
    CascadeModel::new(
        (window, window),
        vec![Stage { classifiers: vec![stump_tree(0, 0.0, 1.0, 1.0)], threshold: 0.5 }],
        vec![feature],
    )
    .unwrap()
}

/// Random 2-stage cascade on a 12x12 window with stumps and one depth-2 tree.
pub fn synthetic_cascade(seed: u64) -> CascadeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = 12;
    let features: Vec<HaarFeature> = (0..8)
        .map(|i| {
            let w = rng.random_range(2..=base / 2);
            let h = rng.random_range(2..=base);
            let x = rng.random_range(0..=base - 2 * w);
            let y = rng.random_range(0..=base - h);
            let mut rects = vec![
                HaarRect { x, y, w: 2 * w, h, weight: -1.0 },
                HaarRect { x: x + w, y, w, h, weight: 2.0 },
            ];
            if i % 3 == 0 {
                let hh = h / 2;
                rects.push(HaarRect { x, y, w: 2 * w, h: hh.max(1), weight: 0.5 });
            }
            HaarFeature { rects }
        })
        .collect();
    let mut stumps = |range: std::ops::Range<usize>| -> Vec<WeakClassifier> {
        range
            .map(|f| stump_tree(f, rng.random_range(-0.08..0.08), rng.random_range(-1.0..0.0), rng.random_range(0.0..1.0)))
            .collect()
    };
    let s0 = stumps(0..4);
    let mut s1 = stumps(4..7);
    s1.push(WeakClassifier {
        nodes: vec![
            TreeNode { feature: 7, threshold: 0.01, left: Child::Node(1), right: Child::Leaf(0) },
            TreeNode { feature: 2, threshold: -0.02, left: Child::Leaf(1), right: Child::Leaf(2) },
        ],
        leaves: vec![0.4, -0.6, 0.2],
    });
    CascadeModel::new(
        (base, base),
        vec![
            Stage { classifiers: s0, threshold: -0.6 },
            Stage { classifiers: s1, threshold: -0.3 },
        ],
        features,
    )
    .unwrap()
}

fn rhu(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

fn pixel_sum(img: &GrayImage, x: usize, y: usize, w: usize, h: usize) -> (i128, i128) {
    let (mut s, mut sq) = (0i128, 0i128);
    for yy in y..y + h {
        for xx in x..x + w {
            let p = i128::from(img.get(xx, yy));
            s += p;
            sq += p * p;
        }
    }
    (s, sq)
}

/// Direct evaluation with every rectangle summed pixel by pixel. Returns
/// `None` when accepted, else the rejecting stage.
pub fn brute_force_window(c: &CascadeModel, img: &GrayImage, ox: usize, oy: usize, scale: f64) -> Option<usize> {
    let (bw, bh) = c.window();
    let (ww, wh) = (rhu(bw as f64 * scale), rhu(bh as f64 * scale));
    assert!(ox + ww <= img.width() && oy + wh <= img.height());
    let clip = |p: usize, len: usize, limit: usize| {
        let p = p.min(limit);
        (p, len.min(limit - p))
    };

    let (nx, nw) = clip(rhu(scale), rhu((bw - 2) as f64 * scale), ww);
    let (ny, nh) = clip(rhu(scale), rhu((bh - 2) as f64 * scale), wh);
    let area = (nw * nh) as i128;
    let (s, sq) = pixel_sum(img, ox + nx, oy + ny, nw, nh);
    let var = area * sq - s * s;
    let nf = if var > 0 { (var as f64).sqrt() } else { area as f64 };

    let feature_value = |fi: usize| -> f64 {
        let scaled: Vec<(usize, usize, usize, usize, f64)> = c.features()[fi]
            .rects
            .iter()
            .map(|r| {
                let (x, w) = clip(rhu(r.x as f64 * scale), rhu(r.w as f64 * scale), ww);
                let (y, h) = clip(rhu(r.y as f64 * scale), rhu(r.h as f64 * scale), wh);
                (x, y, w, h, r.weight)
            })
            .collect();
        let mut weights: Vec<f64> = scaled.iter().map(|r| r.4).collect();
        let area0 = scaled[0].2 * scaled[0].3;
        if area0 > 0 {
            let rest: f64 = scaled[1..].iter().map(|r| r.4 * (r.2 * r.3) as f64).sum();
            weights[0] = -rest / area0 as f64;
        }
        scaled
            .iter()
            .zip(&weights)
            .map(|(r, w)| w * pixel_sum(img, ox + r.0, oy + r.1, r.2, r.3).0 as f64)
            .sum()
    };

    for (si, stage) in c.stages().iter().enumerate() {
        let mut total = 0.0;
        for wc in &stage.classifiers {
            let mut node = 0;
            let leaf = loop {
                let n = &wc.nodes[node];
                let next = if feature_value(n.feature) < n.threshold * nf { n.left } else { n.right };
                match next {
                    Child::Node(i) => node = i,
                    Child::Leaf(l) => break wc.leaves[l],
                }
            };
            total += leaf;
        }
        if total < stage.threshold {
            return Some(si);
        }
    }
    None
}

/// Largest relative error between the analytic gradient of a scalar loss and
/// central differences, over the inputs and every parameter.
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// `loss(net, input)` must be deterministic; `backward` fills parameter
/// gradients and returns the input gradient.
pub fn grad_check(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    loss: impl Fn(&Network<f64>, &Tensor<f64>) -> f64,
    backward: impl Fn(&mut Network<f64>, &Tensor<f64>) -> Tensor<f64>,
) -> GradCheck {
    const H: f64 = 1e-4;
    let dinput = backward(net, input);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + H;
        let up = loss(net, &x);
        x.data_mut()[i] = orig - H;
        let down = loss(net, &x);
        x.data_mut()[i] = orig;
        worst = worst.max(rel_error(dinput.data()[i], (up - down) / (2.0 * H)));
        checked += 1;
    }
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &g) in grads.iter().enumerate() {
            let orig = net.params()[pi].value.data()[j];
            net.params_mut()[pi].value.data_mut()[j] = orig + H;
            let up = loss(net, input);
            net.params_mut()[pi].value.data_mut()[j] = orig - H;
            let down = loss(net, input);
            net.params_mut()[pi].value.data_mut()[j] = orig;
            worst = worst.max(rel_error(g, (up - down) / (2.0 * H)));
            checked += 1;
        }
    }
    GradCheck { max_rel_error: worst, checked }
}

/// Gradient check of `sum(coeffs * output)` for a network in training mode.
pub fn check_linear_probe(net: &mut Network<f64>, input: &Tensor<f64>, seed: u64) -> GradCheck {
    let n = input.shape()[0];
    let k = net.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0EF);
    let coeffs = Tensor::from_fn(vec![n, k], |_| rng.random_range(-1.0..1.0)).unwrap();
    let loss = |net: &Network<f64>, x: &Tensor<f64>| {
        let (out, _) = net.forward(x, seed).unwrap();
        out.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum()
    };
    let backward = |net: &mut Network<f64>, x: &Tensor<f64>| {
        let (_, trace) = net.forward(x, seed).unwrap();
        net.backward(&trace.unwrap(), OutputGrad::Output(&coeffs)).unwrap()
    };
    grad_check(net, input, loss, backward)
}

/// Gradient check of mean softmax cross-entropy through the fused logits path.
pub fn check_cross_entropy(net: &mut Network<f64>, input: &Tensor<f64>, labels: &[usize], seed: u64) -> GradCheck {
    let onehot = fer_core::train::one_hot::<f64>(labels, net.num_classes()).unwrap();
    let loss = |net: &Network<f64>, x: &Tensor<f64>| {
        let (probs, _) = net.forward(x, seed).unwrap();
        fer_core::train::cross_entropy(&probs, &onehot).unwrap().0
    };
    let backward = |net: &mut Network<f64>, x: &Tensor<f64>| {
        let (probs, trace) = net.forward(x, seed).unwrap();
        let (_, grad) = fer_core::train::cross_entropy(&probs, &onehot).unwrap();
        net.backward(&trace.unwrap(), OutputGrad::Logits(&grad)).unwrap()
    };
    grad_check(net, input, loss, backward)
}

pub fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}
