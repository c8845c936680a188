use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{clamp_events, Adam, AdamConfig, ModelConfig, Network, Params};
use crate::dataset::Features;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Stream};
use crate::Real;

const INIT_STREAM: u64 = 0x494e4954;
const SHUFFLE_STREAM: u64 = 0x53485546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr: f64,
    pub epoch_cap: usize,
    /// Epochs without a lower validation risk before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            epoch_cap: 200,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean mini-batch objective (cross entropy plus penalty, dropout on).
    pub train_risk: f64,
    /// Mean validation cross entropy in eval mode.
    pub val_risk: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: ModelConfig,
    pub options: TrainOptions,
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    /// Epoch whose weights were kept (minimal validation risk).
    pub best_epoch: usize,
    pub best_val_risk: f64,
    /// Validation accuracy of the kept weights.
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
    pub test_accuracy: Option<f64>,
    pub n_params: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub clamped_probabilities: usize,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Equality ignoring wall-clock time.
    pub fn deterministic_eq(&self, other: &TrainReport) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_clock_secs = 0.0;
        b.wall_clock_secs = 0.0;
        a.clamped_probabilities = 0;
        b.clamped_probabilities = 0;
        a == b
    }

    /// Stores the test accuracy; a second call is a contract violation.
    pub fn record_test_accuracy(&mut self, acc: f64) -> Result<()> {
        if self.test_accuracy.is_some() {
            return Err(Error::Contract("test accuracy already recorded".into()));
        }
        self.test_accuracy = Some(acc);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_risk,val_risk,val_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_risk, e.val_risk, e.val_accuracy
            ));
        }
        s
    }
}

/// Resumable mini-batch Adam training with early stopping.
pub struct Trainer<'a, F> {
    train: &'a Features<F>,
    val: &'a Features<F>,
    options: TrainOptions,
    net: Network<F>,
    best: Params<F>,
    adam: Adam<F>,
    rng: Stream,
    epochs: Vec<EpochRecord>,
    best_epoch: usize,
    best_val_risk: f64,
    best_val_accuracy: f64,
    since_best: usize,
    stopped_early: bool,
    elapsed: f64,
    clamps_at_start: usize,
}

impl<'a, F: Real> Trainer<'a, F> {
    pub fn new(
        config: ModelConfig,
        options: TrainOptions,
        train: &'a Features<F>,
        val: &'a Features<F>,
    ) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::validation(
                "training and validation sets must be nonempty",
            ));
        }
        if options.batch_size == 0 || options.epoch_cap == 0 {
            return Err(Error::validation(
                "batch size and epoch cap must be positive",
            ));
        }
        if !(options.lr.is_finite() && options.lr >= 0.0) {
            return Err(Error::validation("learning rate must be nonnegative"));
        }
        let net = Network::init(config, derive_seed(options.seed, 0, INIT_STREAM))?;
        net.check_features(train)?;
        net.check_features(val)?;
        let adam = Adam::new(
            AdamConfig {
                lr: options.lr,
                ..AdamConfig::default()
            },
            &net.params,
        );
        Ok(Self {
            train,
            val,
            options,
            best: net.params.clone(),
            net,
            adam,
            rng: stream(derive_seed(options.seed, 0, SHUFFLE_STREAM)),
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_risk: f64::INFINITY,
            best_val_accuracy: 0.0,
            since_best: 0,
            stopped_early: false,
            elapsed: 0.0,
            clamps_at_start: clamp_events(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_finished(&self) -> bool {
        self.stopped_early || self.epochs.len() >= self.options.epoch_cap
    }

    pub fn best_val_accuracy(&self) -> f64 {
        self.best_val_accuracy
    }

    pub fn best_val_risk(&self) -> f64 {
        self.best_val_risk
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.epochs
    }

    /// One pass over the shuffled training set followed by validation.
    pub fn epoch(&mut self) -> Result<()> {
        let start = Instant::now();
        let n = self.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let epoch = self.epochs.len() + 1;
        for (k, idx) in order.chunks(self.options.batch_size).enumerate() {
            let x = self.net.batch_input(self.train, idx);
            let labels: Vec<u8> = idx.iter().map(|&i| self.train.labels[i]).collect();
            let (loss, grads) =
                self.net
                    .loss_and_grad(x, idx.len(), &labels, Some(&mut self.rng))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {k}; best weights are from epoch {}",
                    self.best_epoch
                )));
            }
            self.adam.step(&mut self.net.params, &grads)?;
            total += loss.as_f64() * idx.len() as f64;
        }
        let (val_risk, val_accuracy) = self.net.evaluate(self.val)?;
        if !val_risk.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation risk at epoch {epoch}"
            )));
        }
        let rec = EpochRecord {
            epoch,
            train_risk: total / n as f64,
            val_risk,
            val_accuracy,
        };
        log::debug!(
            "epoch {epoch}: train {:.5} val {:.5} acc {:.2}%",
            rec.train_risk,
            val_risk,
            val_accuracy
        );
        self.epochs.push(rec);
        if val_risk < self.best_val_risk {
            self.best_val_risk = val_risk;
            self.best_val_accuracy = val_accuracy;
            self.best_epoch = epoch;
            self.best = self.net.params.clone();
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.options.patience {
                self.stopped_early = true;
            }
        }
        self.elapsed += start.elapsed().as_secs_f64();
        Ok(())
    }

    /// Trains until `epochs` epochs are done, early stopping fires, or the
    /// cap is reached.
    pub fn run_to(&mut self, epochs: usize) -> Result<()> {
        while !self.is_finished() && self.epochs.len() < epochs {
            self.epoch()?;
        }
        Ok(())
    }

    /// Best-validation weights and the report.
    pub fn finish(self) -> (Network<F>, TrainReport) {
        let n_params = self.net.num_params();
        let report = TrainReport {
            config: self.net.config.clone(),
            options: self.options,
            stopping_epoch: self.epochs.len(),
            epochs: self.epochs,
            best_epoch: self.best_epoch,
            best_val_risk: self.best_val_risk,
            best_val_accuracy: self.best_val_accuracy,
            stopped_early: self.stopped_early,
            test_accuracy: None,
            n_params,
            n_train: self.train.len(),
            n_val: self.val.len(),
            clamped_probabilities: clamp_events() - self.clamps_at_start,
            wall_clock_secs: self.elapsed,
        };
        let net = Network {
            config: self.net.config,
            params: self.best,
        };
        (net, report)
    }
}

/// Trains `config` to completion; returns the weights of the epoch with the
/// lowest validation risk.
pub fn train<F: Real>(
    config: ModelConfig,
    train: &Features<F>,
    val: &Features<F>,
    options: TrainOptions,
) -> Result<(Network<F>, TrainReport)> {
    let mut t = Trainer::new(config, options, train, val)?;
    t.run_to(options.epoch_cap)?;
    Ok(t.finish())
}
