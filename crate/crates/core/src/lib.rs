//! Synthesis and classification of noisy quantum-walk data.
//!
//! A particle hops on a random graph whose links share one stochastic
//! coupling. Couplings are drawn either i.i.d. or from a discrete Markov
//! chain; the recorded node occupation probabilities are then used to tell
//! the noise sources apart with kernel SVMs, MLPs and recurrent networks.
//!
//! Numerical code is generic over [`Real`]; the aliases below fix the
//! precision used by the experiment drivers.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod neural;
pub mod noise;
pub mod rng;
pub mod scalar;
pub mod svm;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

/// Crate version recorded in every dataset and report.
pub const GENERATOR_VERSION: &str = concat!("qnc-core ", env!("CARGO_PKG_VERSION"));

pub type PopulationSequence64 = dynamics::PopulationSequence<f64>;
pub type PopulationSequence32 = dynamics::PopulationSequence<f32>;
pub type QuantumState64 = dynamics::QuantumState<f64>;
pub type Features64 = dataset::Features<f64>;
pub type Network64 = neural::Network<f64>;
pub type SvmModel64 = svm::SvmModel<f64>;
