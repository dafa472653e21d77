mod common;

use common::{always_accept, asset, brute_force_window, random_image, synthetic_cascade, ASTRONAUT_FACE};
use fer_core::data::{read_pgm, GrayImage, Rect};
use fer_core::haar::{
    detect_multiscale, evaluate_window, group_rectangles, integral, load_cascade, raw_candidates, scan_scales,
    window_step, DetectParams, IntegralImage, ScaledCascade, WindowResult,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn integral_matches_pixel_sums_on_random_image() {
    let img = random_image(64, 48, 3);
    let ii = integral(&img);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let x = rng.random_range(0..=64);
        let y = rng.random_range(0..=48);
        let r = Rect::new(x, y, rng.random_range(0..=64 - x), rng.random_range(0..=48 - y));
        let direct: i64 = (r.y..r.y + r.h)
            .flat_map(|yy| (r.x..r.x + r.w).map(move |xx| (xx, yy)))
            .map(|(xx, yy)| i64::from(img.get(xx, yy)))
            .sum();
        assert_eq!(ii.rect_sum(&r), direct, "{r:?}");
    }
}

#[test]
fn evaluator_matches_brute_force_on_every_window() {
    let cascade = synthetic_cascade(21);
    let img = random_image(64, 64, 22);
    let ii = IntegralImage::new(&img);
    let mut outcomes = [0usize; 3];
    for scale in [1.0, 1.25, 1.7, 2.3] {
        let sc = ScaledCascade::new(&cascade, scale).unwrap();
        let (ww, wh) = sc.window();
        for y in 0..=64 - wh {
            for x in 0..=64 - ww {
                let fast = sc.evaluate(&ii, x, y).unwrap();
                let slow = brute_force_window(&cascade, &img, x, y, scale);
                let expected = match slow {
                    None => WindowResult::Accepted,
                    Some(stage) => WindowResult::Rejected { stage },
                };
                assert_eq!(fast, expected, "window ({x}, {y}) at scale {scale}");
                outcomes[slow.map_or(2, |s| s)] += 1;
            }
        }
    }
    // The fixture must exercise rejection at both stages and acceptance.
    assert!(outcomes.iter().all(|&n| n > 0), "{outcomes:?}");
}

#[test]
fn always_accept_enumerates_every_window() {
    let cascade = always_accept(8);
    let (w, h) = (37, 30);
    let img = random_image(w, h, 5);
    let params = DetectParams { scale_factor: 1.3, min_neighbors: 0, min_size: (8, 8), ..DetectParams::default() };
    let raw = raw_candidates(&cascade, &IntegralImage::new(&img), &params).unwrap();

    let mut expected = Vec::new();
    let mut k = 0;
    loop {
        let s = 1.3f64.powi(k);
        let win = (8.0 * s + 0.5).floor() as usize;
        if win > w || win > h {
            break;
        }
        let step = ((2.0 * s + 0.5).floor() as usize).max(1);
        let count = ((w - win) / step + 1) * ((h - win) / step + 1);
        let before = expected.len();
        for y in (0..=h - win).step_by(step) {
            for x in (0..=w - win).step_by(step) {
                expected.push(Rect::new(x, y, win, win));
            }
        }
        assert_eq!(expected.len() - before, count);
        k += 1;
    }
    assert_eq!(raw, expected);
    assert_eq!(scan_scales(&cascade, w, h, &params).unwrap().len(), k as usize);

    let boxes = detect_multiscale(&cascade, &img, &params).unwrap();
    assert!(!boxes.is_empty());
    assert_eq!(boxes.iter().map(|b| b.neighbors).sum::<usize>(), raw.len());
    for b in &boxes {
        assert!(b.x + b.w <= w && b.y + b.h <= h);
    }
}

#[test]
fn min_size_skips_small_scales() {
    let cascade = always_accept(8);
    let params = DetectParams { scale_factor: 1.5, min_size: (12, 12), ..DetectParams::default() };
    let scales = scan_scales(&cascade, 40, 40, &params).unwrap();
    assert_eq!(scales.first(), Some(&1.5));
    assert_eq!(window_step(1.5), 3);
}

#[test]
fn blank_image_always_reject() {
    let mut cascade_xml = always_accept(8).to_xml();
    cascade_xml = cascade_xml.replace("<stageThreshold>0.5</stageThreshold>", "<stageThreshold>inf</stageThreshold>");
    let cascade = fer_core::haar::parse_cascade_xml(&cascade_xml).unwrap();
    let img = GrayImage::filled(40, 40, 128).unwrap();
    assert!(detect_multiscale(&cascade, &img, &DetectParams::default()).unwrap().is_empty());
    assert_eq!(evaluate_window(&cascade, &IntegralImage::new(&img), (0, 0), 1.0).unwrap(), WindowResult::Rejected { stage: 0 });
}

#[test]
fn detection_is_deterministic() {
    let cascade = synthetic_cascade(31);
    let img = random_image(80, 70, 32);
    let params = DetectParams { min_neighbors: 1, min_size: (12, 12), ..DetectParams::default() };
    let a = detect_multiscale(&cascade, &img, &params).unwrap();
    let b = detect_multiscale(&cascade, &img, &params).unwrap();
    assert_eq!(a, b);
    let mut sorted = a.clone();
    sorted.sort_by_key(|d| (d.y, d.x));
    assert_eq!(a.iter().map(|d| (d.y, d.x)).collect::<Vec<_>>(), sorted.iter().map(|d| (d.y, d.x)).collect::<Vec<_>>());
}

#[test]
fn grouping_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut rects: Vec<Rect> = (0..120)
        .map(|_| {
            let s = rng.random_range(20..40);
            Rect::new(rng.random_range(0..100), rng.random_range(0..100), s, s)
        })
        .collect();
    let reference = group_rectangles(&rects, 2, 0.2);
    for _ in 0..10 {
        rects.shuffle(&mut rng);
        assert_eq!(group_rectangles(&rects, 2, 0.2), reference);
    }
}

#[test]
fn frontal_face_cascade_finds_the_astronaut() {
    let cascade = load_cascade(asset("haarcascade_frontalface_default.xml")).unwrap();
    let img = read_pgm(asset("astronaut_face.pgm")).unwrap();
    let boxes = detect_multiscale(&cascade, &img, &DetectParams::default()).unwrap();
    assert_eq!(boxes.len(), 1, "{boxes:?}");
    let (x, y, w, h) = ASTRONAUT_FACE;
    let iou = boxes[0].rect().iou(&Rect::new(x, y, w, h));
    assert!(iou >= 0.5, "IoU {iou} for {:?}", boxes[0]);
    assert!(boxes[0].neighbors >= 3);
}

#[test]
fn frontal_face_cascade_on_blank_image() {
    let cascade = load_cascade(asset("haarcascade_frontalface_default.xml")).unwrap();
    for value in [0, 128, 255] {
        let img = GrayImage::filled(120, 100, value).unwrap();
        assert!(detect_multiscale(&cascade, &img, &DetectParams::default()).unwrap().is_empty());
    }
}
