//! Prints a layer table for the expression network: output shape and
//! trainable parameters per layer.
//!
//! ```text
//! cargo run --example architecture_summary -- [arch.json]
//! ```

use fer_core::nn::NetworkSpec;

fn main() -> fer_core::Result<()> {
    let spec = match std::env::args().nth(1) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).expect("readable architecture file");
            serde_json::from_str::<NetworkSpec>(&text).expect("valid architecture JSON")
        }
        None => NetworkSpec::canonical(),
    };
    spec.validate()?;
    let shapes = spec.infer_shapes()?;
    let counts = spec.count_params()?;
    let names = spec.layer_names();

    println!("{:<24}{:<18}{:>10}", "layer", "output", "params");
    println!("{:<24}{:<18}{:>10}", "input", format!("{:?}", spec.input_shape), 0);
    for ((name, shape), count) in names.iter().zip(&shapes).zip(&counts.per_layer) {
        println!("{name:<24}{:<18}{count:>10}", format!("{shape:?}"));
    }
    println!("{} layers, {} trainable parameters", spec.layers.len(), counts.total);
    Ok(())
}
