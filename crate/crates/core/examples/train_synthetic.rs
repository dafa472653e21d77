//! Trains the canonical network on generated faces until it memorises them.
//!
//! Each class is a bright block at its own position over noise, so the
//! network should reach perfect training accuracy in a few dozen epochs.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [samples] [max_epochs]
//! ```

use std::time::Instant;

use fer_core::data::{Dataset, EmotionLabel, GrayImage, Sample, Split};
use fer_core::nn::{Network, NetworkSpec};
use fer_core::train::{TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn faces(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = EmotionLabel::from_index(i % 7).unwrap();
            let (bx, by) = (4 + 6 * label.index(), 18);
            let noise: Vec<u8> = (0..48 * 48).map(|_| rng.random_range(0..100)).collect();
            let image = GrayImage::from_fn(48, 48, |x, y| {
                if (bx..bx + 6).contains(&x) && (by..by + 12).contains(&y) { 240 } else { noise[y * 48 + x] }
            })
            .unwrap();
            Sample { image, label }
        })
        .collect();
    Dataset::new(Split::Train, samples)
}

fn main() -> fer_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(64, |a| a.parse().expect("sample count"));
    let max_epochs: usize = args.next().map_or(300, |a| a.parse().expect("epoch count"));

    let train = faces(n, 1);
    let config = TrainConfig { batch_size: 16, augment: None, seed: 7, ..TrainConfig::default() };
    let mut net = Network::<f32>::new(NetworkSpec::canonical(), config.seed)?;
    let mut trainer = Trainer::new(&mut net, config)?;
    for epoch in 1..=max_epochs {
        let start = Instant::now();
        let r = trainer.run_epoch(&train, &train)?;
        println!(
            "epoch {epoch:3}  loss {:.4}  acc {:.3}  ({:.2?})",
            r.train_loss,
            r.train_accuracy,
            start.elapsed()
        );
        if r.train_accuracy >= 0.95 {
            println!("memorised {n} samples after {epoch} epochs");
            break;
        }
    }
    Ok(())
}
