//! Runs the full pipeline on one image: detect faces, crop and resize each to
//! 48x48, classify with a saved model and print the probabilities.
//!
//! Without a model file a freshly initialised network is used, so the labels
//! are meaningless but every stage still runs.
//!
//! ```text
//! cargo run --example predict_pipeline -- [image] [model.json]
//! ```

use fer_core::cli::classify_image;
use fer_core::data::{class_names, decode_pnm};
use fer_core::haar::{load_cascade, DetectParams};
use fer_core::nn::{Network, NetworkSpec};
use fer_core::store::read_model;

fn main() -> fer_core::Result<()> {
    let assets = concat!(env!("CARGO_MANIFEST_DIR"), "/assets");
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| format!("{assets}/astronaut_face.ppm"));
    let (net, names) = match args.next() {
        Some(model) => {
            let (net, meta) = read_model(model)?;
            (net, meta.class_names)
        }
        None => (Network::<f32>::new(NetworkSpec::canonical(), 0)?, class_names()),
    };

    let cascade = load_cascade(format!("{assets}/haarcascade_frontalface_default.xml"))?;
    let image = decode_pnm(&std::fs::read(&path).expect("readable image"))?.into_gray();
    let params = DetectParams::default();
    let (records, _) = classify_image(&net, &names, Some((&cascade, &params)), &image, &path)?;

    if records.is_empty() {
        println!("no faces found in {path}");
    }
    for r in records {
        let b = r.face;
        println!("face ({}, {}) {}x{}: {}", b.x, b.y, b.w, b.h, r.label);
        for (name, p) in names.iter().zip(&r.probabilities) {
            println!("  {name:<9} {p:.4}");
        }
    }
    Ok(())
}
