//! Detects faces in a PGM/PPM image with the bundled frontal-face cascade.
//!
//! ```text
//! cargo run --example detect_faces -- [image] [scale_factor] [min_neighbors]
//! ```

use fer_core::data::decode_pnm;
use fer_core::haar::{detect_multiscale, load_cascade, raw_candidates, DetectParams, IntegralImage};

fn main() -> fer_core::Result<()> {
    let assets = concat!(env!("CARGO_MANIFEST_DIR"), "/assets");
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| format!("{assets}/astronaut_face.pgm"));
    let mut params = DetectParams::default();
    if let Some(f) = args.next() {
        params.scale_factor = f.parse().expect("scale factor");
    }
    if let Some(n) = args.next() {
        params.min_neighbors = n.parse().expect("min neighbors");
    }

    let cascade = load_cascade(format!("{assets}/haarcascade_frontalface_default.xml"))?;
    let bytes = std::fs::read(&path).expect("readable image");
    let image = decode_pnm(&bytes)?.into_gray();

    let raw = raw_candidates(&cascade, &IntegralImage::new(&image), &params)?;
    println!("{path}: {}x{}, {} raw windows", image.width(), image.height(), raw.len());
    for b in detect_multiscale(&cascade, &image, &params)? {
        println!("face at ({}, {}) {}x{}, {} neighbors", b.x, b.y, b.w, b.h, b.neighbors);
    }
    Ok(())
}
