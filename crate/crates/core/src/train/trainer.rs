use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::PROB_FLOOR;
use crate::data::{augment, images_to_batch, AugmentPolicy, Dataset, GrayImage, Sample};
use crate::error::{Error, Result};
use crate::nn::{predict_class, Mode, Network, NetworkSpec, OutputGrad, CONV_BLOCK_DROPOUT, DENSE_DROPOUT};
use crate::tensor::Tensor;

/// Samples pushed through forward/backward at once inside a mini-batch. Only
/// bounds memory; the update is the same as for the whole batch at once.
const STEP_CHUNK: usize = 32;
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Per-sample augmentation of training batches; `None` disables it.
    pub augment: Option<AugmentPolicy>,
    pub conv_dropout: f64,
    pub dense_dropout: f64,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 120,
            epochs: 80,
            learning_rate: 0.001,
            adam: AdamConfig::default(),
            seed: 0,
            augment: Some(AugmentPolicy::default()),
            conv_dropout: CONV_BLOCK_DROPOUT,
            dense_dropout: DENSE_DROPOUT,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Arg("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Arg(format!("learning rate {} must be positive", self.learning_rate)));
        }
        for rate in [self.conv_dropout, self.dense_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Arg(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        if self.augment.is_some_and(|a| !a.is_valid()) {
            return Err(Error::Arg("augmentation policy out of range".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Arg("thread count must be at least 1".into()));
        }
        Ok(())
    }

    /// The canonical architecture with this config's dropout rates.
    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::canonical_with_dropout(self.conv_dropout, self.dense_dropout)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub const CURVES_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

/// Learning curves as CSV, one row per epoch.
pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Inference-mode loss, accuracy and predicted classes over a dataset.
pub fn evaluate(net: &Network<f32>, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(dataset.len());
    for chunk in dataset.samples.chunks(EVAL_CHUNK) {
        let probs = net.predict(&images_to_batch(chunk.iter().map(|s| &s.image))?)?;
        for (i, s) in chunk.iter().enumerate() {
            let row = probs.row(i);
            loss -= f64::from(row[s.label.index()]).max(PROB_FLOOR).ln();
            predictions.push(predict_class(row).0);
        }
    }
    let correct = predictions
        .iter()
        .zip(&dataset.samples)
        .filter(|(&p, s)| p == s.label.index())
        .count();
    Ok(Evaluation {
        loss: loss / dataset.len() as f64,
        accuracy: correct as f64 / dataset.len() as f64,
        predictions,
    })
}

/// Mini-batch Adam training, one epoch at a time.
pub struct Trainer<'a> {
    net: &'a mut Network<f32>,
    config: TrainConfig,
    state: AdamState<f32>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(net: &'a mut Network<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = AdamState::new(net.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { net, config, state, rng, epoch: 0 })
    }

    pub fn network(&self) -> &Network<f32> {
        self.net
    }

    /// Shuffles, trains on every mini-batch (the last one may be short), then
    /// evaluates both sets in inference mode.
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data("training and validation sets must be non-empty".into()));
        }
        match self.config.threads {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Arg(format!("thread pool: {e}")))?;
                pool.install(|| self.epoch_inner(train, val))
            }
            None => self.epoch_inner(train, val),
        }
    }

    fn epoch_inner(&mut self, train: &Dataset, val: &Dataset) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        self.net.set_mode(Mode::Train);
        for batch in order.chunks(self.config.batch_size) {
            let batch_seed = self.rng.next_u64();
            self.step(train, batch, batch_seed)?;
        }
        self.net.set_mode(Mode::Infer);
        self.epoch += 1;
        let tr = evaluate(self.net, train)?;
        let va = evaluate(self.net, val)?;
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            val_loss: va.loss,
            val_accuracy: va.accuracy,
        };
        if !(record.train_loss.is_finite() && record.val_loss.is_finite()) {
            return Err(Error::Finite(format!("loss diverged in epoch {}", self.epoch)));
        }
        Ok(record)
    }

    fn step(&mut self, data: &Dataset, batch: &[usize], batch_seed: u64) -> Result<()> {
        let samples: Vec<Sample> = batch
            .iter()
            .enumerate()
            .map(|(i, &idx)| {
                let sample = &data.samples[idx];
                match &self.config.augment {
                    Some(policy) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
                        rng.set_stream(i as u64);
                        augment(sample, policy, &mut rng)
                    }
                    None => sample.clone(),
                }
            })
            .collect();

        let classes = self.net.num_classes();
        let scale = 1.0 / batch.len() as f32;
        self.net.zero_grads();
        for (c, chunk) in samples.chunks(STEP_CHUNK).enumerate() {
            let images: Vec<&GrayImage> = chunk.iter().map(|s| &s.image).collect();
            let input = images_to_batch::<f32>(images)?;
            let (probs, trace) = self.net.forward(&input, mix(batch_seed, c as u64))?;
            let trace = trace.ok_or_else(|| Error::State("forward pass left training mode".into()))?;
            let mut dlogits = probs.into_data();
            for (i, s) in chunk.iter().enumerate() {
                let row = &mut dlogits[i * classes..(i + 1) * classes];
                row[s.label.index()] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            let dlogits = Tensor::new(vec![chunk.len(), classes], dlogits)?;
            self.net.accumulate_backward(&trace, OutputGrad::Logits(&dlogits))?;
        }
        adam_step(self.net.params_mut(), &mut self.state, &self.config.adam, self.config.learning_rate)
    }
}

/// SplitMix64-style mixing for deriving independent sub-seeds.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains for `config.epochs` epochs and returns one record per epoch.
pub fn train(net: &mut Network<f32>, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    train_with(net, train_set, val_set, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    net: &mut Network<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let epochs = config.epochs;
    let mut trainer = Trainer::new(net, config.clone())?;
    let mut records = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let record = trainer.run_epoch(train_set, val_set)?;
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}
