//! Random search with successive halving.
//!
//! `budget` configurations are sampled up front. Survivors train to ¼, ½
//! and the full epoch budget in turn; after each of the first two rungs only
//! the best ⌈n/3⌉ (by validation accuracy, lower trial index on ties) go on.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    Activation, Aggregation, CellKind, HeadConfig, MlpConfig, ModelConfig, Network, RnnConfig,
    TrainOptions, TrainReport, Trainer,
};
use crate::dataset::Features;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Stream};
use crate::Real;

const SAMPLE_STREAM: u64 = 0x53414d50;
const TRIAL_STREAM: u64 = 0x54524941;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    LastHidden,
    Attention,
    MaxPool,
}

/// Architecture family; the search fills in sizes and regularisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Mlp,
    Rnn {
        cell: CellKind,
        bidirectional: bool,
        aggregation: AggregationKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub activations: Vec<Activation>,
    /// Inclusive range of MLP hidden-layer counts.
    pub mlp_layers: (usize, usize),
    pub mlp_width: (usize, usize),
    pub rnn_layers: (usize, usize),
    pub rnn_hidden: (usize, usize),
    pub att_dim: (usize, usize),
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    /// Fixed head for recurrent models.
    pub head: HeadConfig,
}

impl SearchSpace {
    /// MLP: 2–6 hidden layers of width 1–512 with relu/sigmoid/tanh.
    /// RNN: 1–4 layers (1–6 with `deep_rnn`), hidden and attention width
    /// 1–512. Dropout {0, 0.2, 0.5}, weight decay {0, 1e-4, 1e-3}.
    pub fn standard(deep_rnn: bool) -> Self {
        Self {
            activations: Activation::ALL.to_vec(),
            mlp_layers: (2, 6),
            mlp_width: (1, 512),
            rnn_layers: (1, if deep_rnn { 6 } else { 4 }),
            rnn_hidden: (1, 512),
            att_dim: (1, 512),
            dropout: vec![0.0, 0.2, 0.5],
            weight_decay: vec![0.0, 1e-4, 1e-3],
            head: HeadConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ranges = [
            self.mlp_layers,
            self.mlp_width,
            self.rnn_layers,
            self.rnn_hidden,
            self.att_dim,
        ];
        if ranges.iter().any(|(lo, hi)| lo > hi || *lo == 0) {
            return Err(Error::validation(
                "search ranges must be nonempty and positive",
            ));
        }
        if self.activations.is_empty() || self.dropout.is_empty() || self.weight_decay.is_empty() {
            return Err(Error::validation("search choices must be nonempty"));
        }
        Ok(())
    }

    pub fn sample(&self, family: Family, input_dim: usize, rng: &mut Stream) -> ModelConfig {
        let pick_f = |v: &[f64], rng: &mut Stream| v[rng.random_range(0..v.len())];
        match family {
            Family::Mlp => {
                let activation = self.activations[rng.random_range(0..self.activations.len())];
                let layers = uniform(self.mlp_layers, rng);
                let hidden: Vec<usize> = (0..layers)
                    .map(|_| log_uniform(self.mlp_width, rng))
                    .collect();
                let mut c = MlpConfig::new(input_dim, &hidden, activation);
                c.dropout = pick_f(&self.dropout, rng);
                c.weight_decay = pick_f(&self.weight_decay, rng);
                ModelConfig::Mlp(c)
            }
            Family::Rnn {
                cell,
                bidirectional,
                aggregation,
            } => {
                let layers = uniform(self.rnn_layers, rng);
                let hidden_dim = log_uniform(self.rnn_hidden, rng);
                let aggregation = match aggregation {
                    AggregationKind::LastHidden => Aggregation::LastHidden,
                    AggregationKind::MaxPool => Aggregation::MaxPool,
                    AggregationKind::Attention => Aggregation::Attention {
                        att_dim: log_uniform(self.att_dim, rng),
                    },
                };
                ModelConfig::Rnn(RnnConfig {
                    input_dim,
                    cell,
                    layers,
                    hidden_dim,
                    bidirectional,
                    aggregation,
                    head: self.head.clone(),
                    dropout: pick_f(&self.dropout, rng),
                    weight_decay: pick_f(&self.weight_decay, rng),
                })
            }
        }
    }
}

fn uniform((lo, hi): (usize, usize), rng: &mut Stream) -> usize {
    rng.random_range(lo..=hi)
}

/// Integer drawn log-uniformly from `[lo, hi]`.
fn log_uniform((lo, hi): (usize, usize), rng: &mut Stream) -> usize {
    if lo == hi {
        return lo;
    }
    let (a, b) = ((lo as f64).ln(), ((hi + 1) as f64).ln());
    let v = rng.random_range(a..b).exp().floor() as usize;
    v.clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Number of sampled configurations.
    pub budget: usize,
    /// Epochs at the last rung.
    pub epoch_budget: usize,
    /// Batch size, learning rate and patience for every trial; the seed
    /// here drives config sampling and per-trial seeds.
    pub train: TrainOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungResult {
    pub epochs: usize,
    pub val_accuracy: f64,
    pub val_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub config: ModelConfig,
    pub rungs: Vec<RungResult>,
    /// Rung (0-based) after which the trial was dropped.
    pub pruned_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<F> {
    pub best_index: usize,
    pub network: Network<F>,
    pub report: TrainReport,
    pub trials: Vec<Trial>,
}

pub fn rung_epochs(epoch_budget: usize) -> Vec<usize> {
    let mut r = vec![
        epoch_budget.div_ceil(4),
        epoch_budget.div_ceil(2),
        epoch_budget,
    ];
    r.dedup();
    r
}

pub fn hyperparameter_search<F: Real>(
    family: Family,
    space: &SearchSpace,
    options: &SearchOptions,
    train: &Features<F>,
    val: &Features<F>,
) -> Result<SearchOutcome<F>> {
    if options.budget == 0 || options.epoch_budget == 0 {
        return Err(Error::validation(
            "search budget and epoch budget must be positive",
        ));
    }
    space.validate()?;
    let input_dim = match family {
        Family::Mlp => train.dim(),
        Family::Rnn { .. } => train.nodes,
    };
    let seed = options.train.seed;
    let mut sampler = stream(derive_seed(seed, 0, SAMPLE_STREAM));
    let mut trials: Vec<Trial> = (0..options.budget)
        .map(|index| Trial {
            index,
            seed: derive_seed(seed, index as u64, TRIAL_STREAM),
            config: space.sample(family, input_dim, &mut sampler),
            rungs: Vec::new(),
            pruned_after: None,
        })
        .collect();
    let mut live: Vec<(usize, Trainer<'_, F>)> = trials
        .iter()
        .map(|t| {
            let opts = TrainOptions {
                seed: t.seed,
                epoch_cap: options.epoch_budget,
                ..options.train
            };
            Trainer::new(t.config.clone(), opts, train, val).map(|tr| (t.index, tr))
        })
        .collect::<Result<_>>()?;

    let rungs = rung_epochs(options.epoch_budget);
    for (r, &epochs) in rungs.iter().enumerate() {
        live.par_iter_mut()
            .map(|(_, tr)| tr.run_to(epochs))
            .collect::<Result<Vec<_>>>()?;
        for (i, tr) in &live {
            trials[*i].rungs.push(RungResult {
                epochs: tr.epochs_done(),
                val_accuracy: tr.best_val_accuracy(),
                val_risk: tr.best_val_risk(),
            });
            log::info!(
                "trial {i} rung {r}: {} epochs, val acc {:.2}%",
                tr.epochs_done(),
                tr.best_val_accuracy()
            );
        }
        live.sort_by(|(ia, a), (ib, b)| {
            b.best_val_accuracy()
                .total_cmp(&a.best_val_accuracy())
                .then(ia.cmp(ib))
        });
        let keep = if r + 1 == rungs.len() {
            1
        } else {
            live.len().div_ceil(3)
        };
        for (i, _) in live.drain(keep..) {
            trials[i].pruned_after = Some(r);
        }
    }
    let (best_index, trainer) = live.pop().expect("at least one survivor");
    let (network, report) = trainer.finish();
    Ok(SearchOutcome {
        best_index,
        network,
        report,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rungs() {
        assert_eq!(rung_epochs(200), vec![50, 100, 200]);
        assert_eq!(rung_epochs(1), vec![1]);
        assert_eq!(rung_epochs(6), vec![2, 3, 6]);
    }

    #[test]
    fn sampling_respects_space() {
        let space = SearchSpace::standard(false);
        let mut rng = stream(1);
        for _ in 0..200 {
            match space.sample(Family::Mlp, 40, &mut rng) {
                ModelConfig::Mlp(c) => {
                    c.validate().unwrap();
                    assert!((2..=6).contains(&c.hidden().len()));
                }
                _ => unreachable!(),
            }
            let fam = Family::Rnn {
                cell: CellKind::Lstm,
                bidirectional: true,
                aggregation: AggregationKind::Attention,
            };
            match space.sample(fam, 40, &mut rng) {
                ModelConfig::Rnn(c) => {
                    c.validate().unwrap();
                    assert!((1..=4).contains(&c.layers));
                }
                _ => unreachable!(),
            }
        }
        let v: Vec<usize> = (0..1000).map(|_| log_uniform((1, 512), &mut rng)).collect();
        assert!(v.iter().any(|&x| x < 8) && v.iter().any(|&x| x > 256));
    }
}
