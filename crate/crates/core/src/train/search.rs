//! Random-search hyperparameter tuning.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};

/// Range of values for one hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRange {
    Choice(Vec<f64>),
    Uniform(f64, f64),
    LogUniform(f64, f64),
}

impl ParamRange {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamRange::Choice(v) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
            ParamRange::Uniform(lo, hi) => lo.is_finite() && hi.is_finite() && lo <= hi,
            ParamRange::LogUniform(lo, hi) => *lo > 0.0 && hi.is_finite() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Arg(format!("search range for {name} is empty or invalid: {self:?}")))
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamRange::Choice(ref v) => v[rng.random_range(0..v.len())],
            ParamRange::Uniform(lo, hi) if lo == hi => lo,
            ParamRange::Uniform(lo, hi) => rng.random_range(lo..hi),
            ParamRange::LogUniform(lo, hi) if lo == hi => lo,
            ParamRange::LogUniform(lo, hi) => rng.random_range(lo.ln()..hi.ln()).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: ParamRange,
    pub batch_size: ParamRange,
    pub conv_dropout: ParamRange,
    pub dense_dropout: ParamRange,
    pub epochs: ParamRange,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: ParamRange::LogUniform(1e-4, 3e-3),
            batch_size: ParamRange::Choice(vec![32.0, 64.0, 120.0]),
            conv_dropout: ParamRange::Uniform(0.1, 0.4),
            dense_dropout: ParamRange::Uniform(0.3, 0.6),
            epochs: ParamRange::Choice(vec![5.0]),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.learning_rate.validate("learning_rate")?;
        self.batch_size.validate("batch_size")?;
        self.conv_dropout.validate("conv_dropout")?;
        self.dense_dropout.validate("dense_dropout")?;
        self.epochs.validate("epochs")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trial {
    /// Draw order, starting at 0.
    pub index: usize,
    pub config: TrainConfig,
    /// Final-epoch validation accuracy; 0 for failed trials.
    pub val_accuracy: f64,
    pub error: Option<String>,
}

/// Draws `budget` configurations, trains a fresh network per draw and returns
/// the trials sorted by validation accuracy, best first.
///
/// `base_spec` supplies the architecture (its dropout layers take the drawn
/// rates) and `base_config` every setting that is not searched. Trial failures
/// are recorded, not propagated.
pub fn random_search(
    base_spec: &NetworkSpec,
    space: &SearchSpace,
    budget: usize,
    train_set: &Dataset,
    val_set: &Dataset,
    base_config: &TrainConfig,
    seed: u64,
) -> Result<Vec<Trial>> {
    if budget == 0 {
        return Err(Error::Arg("search budget must be at least 1".into()));
    }
    space.validate()?;
    base_spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrainConfig> = (0..budget)
        .map(|_| TrainConfig {
            learning_rate: space.learning_rate.draw(&mut rng),
            batch_size: space.batch_size.draw(&mut rng).round().max(1.0) as usize,
            conv_dropout: space.conv_dropout.draw(&mut rng),
            dense_dropout: space.dense_dropout.draw(&mut rng),
            epochs: space.epochs.draw(&mut rng).round().max(1.0) as usize,
            seed: rng.next_u64(),
            ..base_config.clone()
        })
        .collect();

    let mut trials: Vec<Trial> = configs
        .into_par_iter()
        .enumerate()
        .map(|(index, config)| {
            let outcome = run_trial(base_spec, &config, train_set, val_set);
            let (val_accuracy, error) = match outcome {
                Ok(acc) => (acc, None),
                Err(e) => {
                    log::warn!("trial {index} failed: {e}");
                    (0.0, Some(e.to_string()))
                }
            };
            Trial { index, config, val_accuracy, error }
        })
        .collect();
    trials.sort_by(|a, b| b.val_accuracy.total_cmp(&a.val_accuracy).then(a.index.cmp(&b.index)));
    Ok(trials)
}

fn run_trial(base_spec: &NetworkSpec, config: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<f64> {
    let spec = base_spec.with_dropout_rates(config.conv_dropout, config.dense_dropout);
    let mut net = Network::<f32>::new(spec, config.seed)?;
    let records = train(&mut net, train_set, val_set, config)?;
    Ok(records.last().map(|r| r.val_accuracy).unwrap_or(0.0))
}

/// Ranked table of trials.
pub fn trials_table(trials: &[Trial]) -> String {
    let mut out = String::from("rank,trial,val_accuracy,learning_rate,batch_size,conv_dropout,dense_dropout,epochs,seed,error\n");
    for (rank, t) in trials.iter().enumerate() {
        let c = &t.config;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            t.index,
            t.val_accuracy,
            c.learning_rate,
            c.batch_size,
            c.conv_dropout,
            c.dense_dropout,
            c.epochs,
            c.seed,
            t.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_ranges_draw_their_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ParamRange::Uniform(0.3, 0.3).draw(&mut rng), 0.3);
        assert_eq!(ParamRange::LogUniform(1e-3, 1e-3).draw(&mut rng), 1e-3);
        assert_eq!(ParamRange::Choice(vec![64.0]).draw(&mut rng), 64.0);
        for _ in 0..100 {
            let v = ParamRange::LogUniform(1e-4, 1e-2).draw(&mut rng);
            assert!((1e-4..1e-2).contains(&v));
        }
    }

    #[test]
    fn invalid_space_rejected() {
        let space = SearchSpace {
            batch_size: ParamRange::Choice(vec![]),
            ..SearchSpace::default()
        };
        assert!(space.validate().is_err());
        assert!(ParamRange::Uniform(2.0, 1.0).validate("x").is_err());
    }

    #[test]
    fn space_json_shape() {
        let json = r#"{"learning_rate": {"log_uniform": [0.0001, 0.01]}, "batch_size": {"choice": [32, 64]}}"#;
        let space: SearchSpace = serde_json::from_str(json).unwrap();
        assert_eq!(space.learning_rate, ParamRange::LogUniform(1e-4, 1e-2));
        assert_eq!(space.epochs, SearchSpace::default().epochs);
    }
}
