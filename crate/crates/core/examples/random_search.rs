//! Random hyperparameter search on a small generated dataset, printing the
//! ranked trials.
//!
//! ```text
//! cargo run --release --example random_search -- [budget] [seed]
//! ```

use fer_core::data::{Dataset, EmotionLabel, GrayImage, Sample, Split};
use fer_core::nn::{Activation, LayerSpec, NetworkSpec};
use fer_core::train::{random_search, trials_table, ParamRange, SearchSpace, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blocks(n: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = EmotionLabel::from_index(i % 7).unwrap();
            let x0 = 4 + 6 * label.index();
            let noise: Vec<u8> = (0..48 * 48).map(|_| rng.random_range(0..140)).collect();
            let image = GrayImage::from_fn(48, 48, |x, y| if (x0..x0 + 6).contains(&x) && (18..30).contains(&y) { 200 } else { noise[y * 48 + x] })
                .unwrap();
            Sample { image, label }
        })
        .collect();
    Dataset::new(split, samples)
}

fn main() -> fer_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let budget: usize = args.next().map_or(4, |a| a.parse().expect("budget"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));

    let spec = NetworkSpec {
        input_shape: [48, 48, 1],
        layers: vec![
            LayerSpec::Rescaling { scale: 1.0 / 255.0 },
            LayerSpec::conv(8),
            LayerSpec::max_pool(),
            LayerSpec::max_pool(),
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Flatten,
            LayerSpec::dense(32, Activation::Relu),
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::dense(7, Activation::Softmax),
        ],
    };
    let space = SearchSpace {
        learning_rate: ParamRange::LogUniform(1e-3, 1e-2),
        batch_size: ParamRange::Choice(vec![8.0, 16.0]),
        conv_dropout: ParamRange::Uniform(0.0, 0.3),
        dense_dropout: ParamRange::Uniform(0.0, 0.5),
        epochs: ParamRange::Choice(vec![3.0, 6.0]),
    };
    let base = TrainConfig { augment: None, ..TrainConfig::default() };
    let trials = random_search(&spec, &space, budget, &blocks(70, 1, Split::Train), &blocks(35, 2, Split::Validation), &base, seed)?;
    print!("{}", trials_table(&trials));
    Ok(())
}
