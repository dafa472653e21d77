//! Compares analytic gradients of a small convolutional network against
//! central finite differences in double precision.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use fer_core::nn::{Activation, LayerSpec, Mode, Network, NetworkSpec, OutputGrad};
use fer_core::train::{cross_entropy, one_hot};
use fer_core::Tensor;

const EPS: f64 = 1e-5;

fn loss(net: &Network<f64>, input: &Tensor<f64>, onehot: &Tensor<f64>) -> f64 {
    let (probs, _) = net.forward(input, 0).unwrap();
    cross_entropy(&probs, onehot).unwrap().0
}

fn main() -> fer_core::Result<()> {
    let spec = NetworkSpec {
        input_shape: [8, 8, 1],
        layers: vec![
            LayerSpec::Conv2D { filters: 3, kernel: [3, 3], activation: Activation::Relu },
            LayerSpec::max_pool(),
            LayerSpec::Flatten,
            LayerSpec::dense(4, Activation::Softmax),
        ],
    };
    let mut net = Network::<f64>::new(spec, 3)?;
    net.set_mode(Mode::Train);
    let input = Tensor::from_fn(vec![2, 8, 8, 1], |i| ((i * 37 % 101) as f64) / 101.0)?;
    let onehot = one_hot::<f64>(&[1, 3], 4)?;

    net.zero_grads();
    let (probs, trace) = net.forward(&input, 0)?;
    let (_, grad) = cross_entropy(&probs, &onehot)?;
    net.backward(&trace.expect("training trace"), OutputGrad::Logits(&grad))?;

    let mut worst = 0.0f64;
    for p in 0..net.params().len() {
        let name = net.params()[p].name.clone();
        let analytic = net.params()[p].grad.data().to_vec();
        let mut layer_worst = 0.0f64;
        for (i, &a) in analytic.iter().enumerate() {
            let original = net.params()[p].value.data()[i];
            net.params_mut()[p].value.data_mut()[i] = original + EPS;
            let up = loss(&net, &input, &onehot);
            net.params_mut()[p].value.data_mut()[i] = original - EPS;
            let down = loss(&net, &input, &onehot);
            net.params_mut()[p].value.data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * EPS);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            layer_worst = layer_worst.max(rel);
        }
        println!("{name:<20} {:>4} values  max relative error {layer_worst:.2e}", analytic.len());
        worst = worst.max(layer_worst);
    }
    println!("overall max relative error {worst:.2e}");
    Ok(())
}
