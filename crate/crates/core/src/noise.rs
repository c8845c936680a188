//! Coupling-strength noise: i.i.d. draws and order-1 discrete Markov chains.
//!
//! Transition matrices are left-stochastic: `entries[i][j]` is the
//! probability of moving to support value `i` given the previous value `j`,
//! so every column sums to one.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coupling values used by both presets.
pub const PRESET_SUPPORT: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
/// Skewed law concentrated on the strongest coupling.
pub const SKEWED_PROBS: [f64; 5] = [0.0124, 0.04236, 0.0820, 0.2398, 0.6234];
/// Nearly flat law.
pub const FLAT_PROBS: [f64; 5] = [0.1782, 0.1865, 0.2, 0.2107, 0.2245];

const SUM_TOLERANCE: f64 = 1e-12;

/// Discrete law over a finite, strictly increasing support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct DiscreteDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawDistribution> for DiscreteDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        DiscreteDistribution::new(raw.support, raw.probs)
    }
}

impl From<DiscreteDistribution> for RawDistribution {
    fn from(d: DiscreteDistribution) -> Self {
        RawDistribution {
            support: d.support,
            probs: d.probs,
        }
    }
}

impl DiscreteDistribution {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::validation("distribution support is empty"));
        }
        if support.len() != probs.len() {
            return Err(Error::validation(format!(
                "support has {} values but {} probabilities were given",
                support.len(),
                probs.len()
            )));
        }
        if support.iter().any(|g| !g.is_finite()) {
            return Err(Error::validation("support values must be finite"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("support must be strictly increasing"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::validation("probabilities must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let cumulative = probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            support,
            probs,
            cumulative,
        })
    }

    /// Point mass on a single value.
    pub fn point(value: f64) -> Result<Self> {
        Self::new(vec![value], vec![1.0])
    }

    pub fn uniform(support: Vec<f64>) -> Result<Self> {
        let n = support.len().max(1);
        Self::new(support, vec![1.0 / n as f64; n])
    }

    /// Divides `weights` by their sum before validating.
    pub fn normalized(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::validation("weights must have a positive finite sum"));
        }
        Self::new(support, weights.into_iter().map(|w| w / total).collect())
    }

    /// The skewed preset law over {1, …, 5}. The published weights are
    /// rounded (they sum to 0.99996) and are renormalised here.
    pub fn skewed() -> Self {
        Self::normalized(PRESET_SUPPORT.to_vec(), SKEWED_PROBS.to_vec()).expect("valid preset")
    }

    /// The nearly flat preset law over {1, …, 5}, renormalised from weights
    /// summing to 0.9999.
    pub fn flat() -> Self {
        Self::normalized(PRESET_SUPPORT.to_vec(), FLAT_PROBS.to_vec()).expect("valid preset")
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Same support, different weights.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(self.support.clone(), probs)
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(g, p)| g * p)
            .sum()
    }

    /// Inverse-CDF lookup of a uniform variate in [0, 1).
    fn index_for(&self, u: f64) -> usize {
        let last = self.cumulative.len() - 1;
        self.cumulative[..last]
            .iter()
            .position(|&c| u < c)
            .unwrap_or(last)
    }

    /// Draws a support index, consuming exactly one uniform variate.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index_for(rng.random::<f64>())
    }
}

/// Left-stochastic `D×D` transition matrix of an order-1 chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    dim: usize,
    /// Row-major, `entries[next * dim + prev]`.
    entries: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TransitionMatrix::from_rows(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(t: TransitionMatrix) -> Self {
        t.rows()
    }
}

impl TransitionMatrix {
    /// Builds from rows: `rows[i][j] = p(next = g_i | prev = g_j)`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::validation("transition matrix is empty"));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation("transition matrix must be square"));
        }
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        if entries
            .iter()
            .any(|&p| !p.is_finite() || !(0.0..=1.0).contains(&p))
        {
            return Err(Error::validation("transition entries must lie in [0, 1]"));
        }
        for prev in 0..dim {
            let col: f64 = (0..dim).map(|next| entries[next * dim + prev]).sum();
            if (col - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::validation(format!(
                    "column {prev} of the transition matrix sums to {col}, not 1"
                )));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    /// Every entry equal to `1/dim`: the uncorrelated chain.
    pub fn uniform(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![1.0 / dim as f64; dim * dim],
        }
    }

    /// Independent Dirichlet(1, …, 1) draw for every column.
    pub fn random_dirichlet<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for prev in 0..dim {
            let draws: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            for (next, e) in draws.into_iter().enumerate() {
                entries[next * dim + prev] = e / total;
            }
            // Push rounding residue onto the largest entry so the column sums exactly.
            let col_sum: f64 = (0..dim).map(|n| entries[n * dim + prev]).sum();
            let argmax = (0..dim)
                .max_by(|&a, &b| entries[a * dim + prev].total_cmp(&entries[b * dim + prev]))
                .unwrap_or(0);
            entries[argmax * dim + prev] += 1.0 - col_sum;
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `p(next | prev)`.
    #[inline]
    pub fn get(&self, next: usize, prev: usize) -> f64 {
        self.entries[next * self.dim + prev]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    fn next_index(&self, prev: usize, u: f64) -> usize {
        let mut acc = 0.0;
        for next in 0..self.dim - 1 {
            acc += self.get(next, prev);
            if u < acc {
                return next;
            }
        }
        self.dim - 1
    }

    /// `T · v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Stationary law `π = Tπ`.
    ///
    /// Iterates `P ← T·P` from the identity until every column of `P` agrees,
    /// which happens only for irreducible aperiodic chains; other chains
    /// exhaust the iteration budget and are reported as non-ergodic.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        const MAX_ITER: usize = 100_000;
        const SPREAD_TOL: f64 = 1e-12;
        let d = self.dim;
        let mut p = Self::identity(d).entries;
        let mut next = vec![0.0; d * d];
        let mut spread = f64::INFINITY;
        for _ in 0..MAX_ITER {
            for i in 0..d {
                for j in 0..d {
                    next[i * d + j] = (0..d).map(|k| self.get(i, k) * p[k * d + j]).sum();
                }
            }
            std::mem::swap(&mut p, &mut next);
            spread = (0..d)
                .map(|i| {
                    let row = &p[i * d..(i + 1) * d];
                    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    hi - lo
                })
                .fold(0.0, f64::max);
            if spread <= SPREAD_TOL {
                let mut pi: Vec<f64> = (0..d)
                    .map(|i| p[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64)
                    .collect();
                let total: f64 = pi.iter().sum();
                pi.iter_mut().for_each(|x| *x /= total);
                return Ok(pi);
            }
        }
        Err(Error::NonErgodic {
            iterations: MAX_ITER,
            spread,
        })
    }

    /// Lag-1 autocorrelation of the stationary chain's values.
    pub fn stationary_autocorrelation(&self, support: &[f64]) -> Result<f64> {
        let pi = self.stationary_distribution()?;
        let mean: f64 = support.iter().zip(&pi).map(|(g, p)| g * p).sum();
        let var: f64 = support
            .iter()
            .zip(&pi)
            .map(|(g, p)| p * (g - mean).powi(2))
            .sum();
        let mut cov = 0.0;
        for prev in 0..self.dim {
            for next in 0..self.dim {
                cov += pi[prev]
                    * self.get(next, prev)
                    * (support[prev] - mean)
                    * (support[next] - mean);
            }
        }
        Ok(if var > 0.0 { cov / var } else { 0.0 })
    }
}

/// Correlated chain whose stationary law equals `target`.
///
/// Metropolis kernel with uniform independent proposals, mixed with the
/// identity: `T = s·I + (1 − s)·K`. Larger `stickiness` gives stronger
/// positive lag-1 correlation while leaving the marginal untouched.
pub fn metropolis_chain(
    target: &DiscreteDistribution,
    stickiness: f64,
) -> Result<TransitionMatrix> {
    if !(0.0..1.0).contains(&stickiness) {
        return Err(Error::validation(format!(
            "stickiness must lie in [0, 1), got {stickiness}"
        )));
    }
    let d = target.len();
    let pi = target.probs();
    let q = 1.0 / d as f64;
    let mut entries = vec![0.0; d * d];
    for prev in 0..d {
        let mut moved = 0.0;
        for next in 0..d {
            if next == prev {
                continue;
            }
            let accept = if pi[prev] > 0.0 {
                (pi[next] / pi[prev]).min(1.0)
            } else {
                1.0
            };
            let p = (1.0 - stickiness) * q * accept;
            entries[next * d + prev] = p;
            moved += p;
        }
        entries[prev * d + prev] = 1.0 - moved;
    }
    Ok(TransitionMatrix { dim: d, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    Iid,
    Markov,
}

/// A coupling-noise source: a law for the first draw and, for coloured
/// noise, the chain that generates every later draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcess {
    pub dist: DiscreteDistribution,
    pub transition: Option<TransitionMatrix>,
    /// Provenance of chains built by [`metropolis_chain`].
    pub stickiness: Option<f64>,
}

impl NoiseProcess {
    pub fn iid(dist: DiscreteDistribution) -> Self {
        Self {
            dist,
            transition: None,
            stickiness: None,
        }
    }

    pub fn markov(dist: DiscreteDistribution, transition: TransitionMatrix) -> Result<Self> {
        if transition.dim() != dist.len() {
            return Err(Error::validation(format!(
                "transition matrix is {0}x{0} but the support has {1} values",
                transition.dim(),
                dist.len()
            )));
        }
        Ok(Self {
            dist,
            transition: Some(transition),
            stickiness: None,
        })
    }

    /// Coloured process sharing `dist` as its stationary law.
    pub fn matched_markov(dist: DiscreteDistribution, stickiness: f64) -> Result<Self> {
        let t = metropolis_chain(&dist, stickiness)?;
        let mut p = Self::markov(dist, t)?;
        p.stickiness = Some(stickiness);
        Ok(p)
    }

    pub fn kind(&self) -> NoiseKind {
        if self.transition.is_some() {
            NoiseKind::Markov
        } else {
            NoiseKind::Iid
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.transition {
            if t.dim() != self.dist.len() {
                return Err(Error::validation(
                    "transition dimension differs from support size",
                ));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<CouplingSequence> {
        match self.kind() {
            NoiseKind::Iid => sample_iid(&self.dist, m, rng),
            NoiseKind::Markov => sample_markov(self, m, rng),
        }
    }
}

/// Piecewise-constant couplings `g_{t_0}, …, g_{t_{M-1}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSequence(Vec<f64>);

impl CouplingSequence {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `m` independent draws; consumes exactly `m` uniform variates.
pub fn sample_iid<R: Rng + ?Sized>(
    dist: &DiscreteDistribution,
    m: usize,
    rng: &mut R,
) -> Result<CouplingSequence> {
    if m == 0 {
        return Err(Error::validation("sequence length must be at least 1"));
    }
    let support = dist.support();
    Ok(CouplingSequence(
        (0..m).map(|_| support[dist.sample_index(rng)]).collect(),
    ))
}

/// First value from the process law, every later value from the column of
/// `T` selected by its predecessor. No burn-in.
pub fn sample_markov<R: Rng + ?Sized>(
    process: &NoiseProcess,
    m: usize,
    rng: &mut R,
) -> Result<CouplingSequence> {
    let t = process.transition.as_ref().ok_or_else(|| {
        Error::Contract("sample_markov requires a process with a transition matrix".into())
    })?;
    if m == 0 {
        return Err(Error::validation("sequence length must be at least 1"));
    }
    let support = process.dist.support();
    let mut idx = process.dist.sample_index(rng);
    let mut values = Vec::with_capacity(m);
    values.push(support[idx]);
    for _ in 1..m {
        idx = t.next_index(idx, rng.random::<f64>());
        values.push(support[idx]);
    }
    Ok(CouplingSequence(values))
}
