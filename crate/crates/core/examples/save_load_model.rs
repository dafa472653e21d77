//! Saves a network to the JSON model format, loads it back and checks that
//! the two give bit-identical predictions.
//!
//! ```text
//! cargo run --example save_load_model -- [model.json]
//! ```

use fer_core::data::{images_to_batch, GrayImage};
use fer_core::nn::{Network, NetworkSpec};
use fer_core::store::{read_model, save_model, ModelMetadata};
use fer_core::train::TrainConfig;

fn main() -> fer_core::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("fer_example_model.json").display().to_string());
    let net = Network::<f32>::new(NetworkSpec::canonical(), 42)?;
    let file = save_model(&net, ModelMetadata::default().with_training(&TrainConfig::default()).stamped(), &path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("saved {} tensors, {} weights, {bytes} bytes to {path}", file.weights.len(), file.weight_count());

    let (loaded, meta) = read_model(&path)?;
    println!("classes: {}", meta.class_names.join(", "));

    let faces: Vec<GrayImage> = (0..4).map(|k| GrayImage::from_fn(48, 48, |x, y| ((x * 5 + y * 3 + k * 40) % 256) as u8)).collect::<Result<_, _>>()?;
    let batch = images_to_batch::<f32>(faces.iter())?;
    let (a, b) = (net.predict(&batch)?, loaded.predict(&batch)?);
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("predictions identical after reload: {same}");
    assert!(same);
    Ok(())
}
