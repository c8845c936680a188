//! Feed-forward and recurrent binary classifiers with hand-written
//! backpropagation, Adam training, and hyperparameter search.
//!
//! Everything runs on mini-batches. A sequence batch of `B` samples with
//! `τ` steps is a `(τ·B) × d` matrix whose block `t` (rows `t·B .. (t+1)·B`)
//! holds step `t` of every sample.

mod dense;
mod gradcheck;
mod model;
mod optim;
mod params;
mod recurrent;
mod search;
mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::Real;

pub use gradcheck::{gradient_check, GradientCheck};
pub use model::{
    Aggregation, CellKind, HeadConfig, MlpConfig, ModelConfig, Network, RnnConfig,
    MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use optim::{Adam, AdamConfig};
pub use params::Params;
pub use recurrent::{
    aggregate, attention_weights, gru_cell, lstm_cell, run_rnn, GruWeights, LstmWeights, RnnOutput,
};
pub use search::{
    hyperparameter_search, rung_epochs, AggregationKind, Family, RungResult, SearchOptions,
    SearchOutcome, SearchSpace, Trial,
};
pub use train::{train, EpochRecord, TrainOptions, TrainReport, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::Sigmoid, Activation::Tanh];

    #[inline]
    pub fn apply<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `h`.
    #[inline]
    pub fn derivative_from_output<F: Real>(self, h: F) -> F {
        match self {
            Activation::Relu => {
                if h > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => h * (F::one() - h),
            Activation::Tanh => F::one() - h * h,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "relu" | "rectifier" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(crate::Error::validation(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

#[inline]
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows<F: Real>(logits: ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Probabilities below this are clamped inside [`cross_entropy`].
pub const PROBABILITY_FLOOR: f64 = 1e-12;

static CLAMP_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Number of clamped probabilities seen by [`cross_entropy`] so far.
pub fn clamp_events() -> usize {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// `−log p[target]`, with `p[target]` clamped at [`PROBABILITY_FLOOR`].
pub fn cross_entropy<F: Real>(pred: &[F], target: usize) -> F {
    let p = pred[target];
    let floor = F::lit(PROBABILITY_FLOOR);
    if !(p >= floor) {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        log::warn!("predicted probability {p} at the target class clamped to {PROBABILITY_FLOOR}");
        return -floor.ln();
    }
    -p.ln()
}

/// Mean cross entropy of a probability batch.
pub fn mean_cross_entropy<F: Real>(probs: ArrayView2<F>, labels: &[u8]) -> F {
    let mut total = F::zero();
    for (row, &l) in probs.rows().into_iter().zip(labels) {
        total += cross_entropy(&[row[0], row[1]], l as usize);
    }
    total / F::lit(labels.len() as f64)
}

/// Predicted class; an exact tie goes to class 0.
#[inline]
pub fn argmax2<F: Real>(p0: F, p1: F) -> u8 {
    u8::from(p1 > p0)
}

/// Percentage of rows whose argmax matches the label.
pub fn accuracy<F: Real>(probs: ArrayView2<F>, labels: &[u8]) -> f64 {
    assert_eq!(probs.nrows(), labels.len(), "one prediction per label");
    assert!(!labels.is_empty(), "accuracy of an empty set");
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &l)| argmax2(r[0], r[1]) == l)
        .count();
    100.0 * hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(array![[0.0, 0.0], [3.0, 3.0], [3f64.ln(), 0.0]].view());
        assert_eq!(p.row(0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(p.row(1).to_vec(), vec![0.5, 0.5]);
        assert!((p[[2, 0]] - 0.75).abs() < 1e-12);
        assert!((p[[2, 1]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0f64, 0.0], 0), 0.0);
        assert!((cross_entropy(&[0.5f64, 0.5], 1) - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.75f64, 0.25], 1) - 4f64.ln()).abs() < 1e-15);
        let before = clamp_events();
        let v = cross_entropy(&[1.0f64, 0.0], 1);
        assert!((v - 1e12f64.ln()).abs() < 1e-9);
        assert!(clamp_events() > before);
    }

    #[test]
    fn accuracy_examples() {
        let probs = array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]];
        assert_eq!(accuracy(probs.view(), &[0, 1, 0, 1]), 100.0);
        assert_eq!(accuracy(probs.view(), &[1, 0, 1, 0]), 0.0);
        assert_eq!(accuracy(probs.view(), &[0, 1, 1, 1]), 75.0);
        assert_eq!(accuracy(array![[0.5, 0.5]].view(), &[0]), 100.0);
    }

    #[test]
    fn activations_and_derivatives() {
        for a in Activation::ALL {
            for z in [-2.0f64, -0.3, 0.4, 1.7] {
                let h = a.apply(z);
                let e = 1e-6;
                let num = (a.apply(z + e) - a.apply(z - e)) / (2.0 * e);
                assert!((num - a.derivative_from_output(h)).abs() < 1e-8);
            }
        }
        assert_eq!(sigmoid(-800.0f64), 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }

    proptest! {
        #[test]
        fn softmax_normalised(a in -700.0f64..700.0, b in -700.0f64..700.0) {
            let p = softmax_rows(array![[a, b]].view());
            prop_assert!(p[[0, 0]] >= 0.0 && p[[0, 1]] >= 0.0);
            prop_assert!((p[[0, 0]] + p[[0, 1]] - 1.0).abs() < 1e-12);
            if (a - b).abs() < 700.0 {
                prop_assert!(p[[0, 0]] > 0.0 && p[[0, 1]] > 0.0);
            }
        }
    }
}
