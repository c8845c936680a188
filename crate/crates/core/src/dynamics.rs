//! Quantum walk of a single particle on a graph whose links share one
//! piecewise-constant stochastic coupling.
//!
//! The initial state is a node-localised pure state and every noise
//! realisation evolves unitarily, so trajectories are propagated as
//! `d`-dimensional amplitude vectors. The vectorised `d²` Liouvillian path
//! ([`evolve_vectorized`]) is kept as an independent cross-check.

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm_complex, symmetric_eigen, SymmetricEigen};
use crate::noise::CouplingSequence;
use crate::Real;

/// Undirected simple graph on nodes `1..=d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTopology {
    d: usize,
    /// Sorted, each pair `(s, l)` with `s < l`, 1-based.
    edges: Vec<(usize, usize)>,
}

impl GraphTopology {
    pub fn new(d: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut norm = Vec::new();
        for (s, l) in edges {
            if s == l {
                return Err(Error::validation(format!("self-loop on node {s}")));
            }
            if s == 0 || l == 0 || s > d || l > d {
                return Err(Error::validation(format!(
                    "edge ({s}, {l}) outside node range 1..={d}"
                )));
            }
            norm.push((s.min(l), s.max(l)));
        }
        norm.sort_unstable();
        let before = norm.len();
        norm.dedup();
        if norm.len() != before {
            return Err(Error::validation("duplicate edge"));
        }
        Ok(Self { d, edges: norm })
    }

    pub fn complete(d: usize) -> Self {
        let edges = (1..=d)
            .flat_map(|s| ((s + 1)..=d).map(move |l| (s, l)))
            .collect();
        Self { d, edges }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(s, l)| s == node || l == node)
            .count()
    }

    /// Relabels node `i` as `perm[i - 1]` (both 1-based).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: perm.len(),
            });
        }
        Self::new(
            self.d,
            self.edges.iter().map(|&(s, l)| (perm[s - 1], perm[l - 1])),
        )
    }
}

/// Erdős–Rényi graph: each of the `d(d−1)/2` links independently with
/// probability `edge_prob`, visited in lexicographic order.
pub fn random_topology<R: Rng + ?Sized>(
    d: usize,
    edge_prob: f64,
    rng: &mut R,
) -> Result<GraphTopology> {
    if d < 2 {
        return Err(Error::validation("graph needs at least two nodes"));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::validation(format!(
            "edge probability must lie in (0, 1], got {edge_prob}"
        )));
    }
    let mut edges = Vec::new();
    for s in 1..=d {
        for l in (s + 1)..=d {
            if rng.random::<f64>() < edge_prob {
                edges.push((s, l));
            }
        }
    }
    Ok(GraphTopology { d, edges })
}

/// Hamiltonian with every link coupled by `g` and zero on-site energies.
pub fn adjacency<F: Real>(topology: &GraphTopology, g: F) -> Array2<F> {
    let d = topology.d();
    let mut a = Array2::zeros((d, d));
    for &(s, l) in topology.edges() {
        a[[s - 1, l - 1]] = g;
        a[[l - 1, s - 1]] = g;
    }
    a
}

fn check_symmetric<F: Real>(a: &Array2<F>) -> Result<()> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::validation("matrix is not square"));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if a[[i, j]] != a[[j, i]] {
                return Err(Error::validation(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Generator of the vectorised von Neumann equation (ħ = 1):
/// `L = −i (I ⊗ A − Aᵀ ⊗ I)`, acting on column-stacked density matrices.
pub fn liouvillian<F: Real>(a: &Array2<F>) -> Result<Array2<Complex<F>>> {
    check_symmetric(a)?;
    let d = a.nrows();
    let n = d * d;
    let mut l = Array2::from_elem((n, n), Complex::new(F::zero(), F::zero()));
    // (X ⊗ Y)[i·d + k, j·d + m] = X[i, j] · Y[k, m]
    for i in 0..d {
        for k in 0..d {
            for m in 0..d {
                // I ⊗ A: i == j
                let v = a[[k, m]];
                if v != F::zero() {
                    l[[i * d + k, i * d + m]] += Complex::new(F::zero(), -v);
                }
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            let v = a[[j, i]]; // Aᵀ[i, j]
            if v == F::zero() {
                continue;
            }
            for k in 0..d {
                l[[i * d + k, j * d + k]] += Complex::new(F::zero(), v);
            }
        }
    }
    Ok(l)
}

/// Pure state in the node basis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState<F> {
    amplitudes: Array1<Complex<F>>,
}

impl<F: Real> QuantumState<F> {
    pub fn new(amplitudes: Array1<Complex<F>>) -> Result<Self> {
        let s = Self { amplitudes };
        let n = s.norm_sqr();
        if (n - F::one()).abs() > F::lit(1e-9).max(F::tolerance_floor() * F::lit(100.0)) {
            return Err(Error::validation(format!(
                "state is not normalised (|ψ|² = {n})"
            )));
        }
        Ok(s)
    }

    /// Particle localised on `node` (1-based).
    pub fn localized(d: usize, node: usize) -> Result<Self> {
        if node == 0 || node > d {
            return Err(Error::validation(format!("node {node} outside 1..={d}")));
        }
        let mut amplitudes = Array1::from_elem(d, Complex::new(F::zero(), F::zero()));
        amplitudes[node - 1] = Complex::new(F::one(), F::zero());
        Ok(Self { amplitudes })
    }

    pub fn amplitudes(&self) -> &Array1<Complex<F>> {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> F {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Array1<F> {
        self.amplitudes.mapv(|z| z.norm_sqr())
    }
}

/// Spectral decomposition of the unit-coupling adjacency matrix.
///
/// Every step Hamiltonian is `g_k · B`, so one eigendecomposition of `B`
/// serves the whole trajectory: `exp(−iΔ g B) = V exp(−iΔ g Λ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Propagator<F> {
    eigen: SymmetricEigen<F>,
}

impl<F: Real> Propagator<F> {
    pub fn new(hamiltonian: &Array2<F>) -> Result<Self> {
        check_symmetric(hamiltonian)?;
        Ok(Self {
            eigen: symmetric_eigen(hamiltonian)?,
        })
    }

    pub fn for_topology(topology: &GraphTopology) -> Result<Self> {
        Self::new(&adjacency(topology, F::one()))
    }

    /// `exp(−i · time · scale · H) ψ`.
    pub fn apply(&self, state: &QuantumState<F>, scale: F, time: F) -> Result<QuantumState<F>> {
        let d = self.eigen.values.len();
        if state.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: state.dim(),
            });
        }
        let v = &self.eigen.vectors;
        let psi = state.amplitudes();
        let mut out = Array1::from_elem(d, Complex::new(F::zero(), F::zero()));
        for k in 0..d {
            // Project onto eigenvector k, rotate phase, accumulate.
            let mut c = Complex::new(F::zero(), F::zero());
            for i in 0..d {
                c = c + psi[i] * v[[i, k]];
            }
            let phase = -(time * scale * self.eigen.values[k]);
            let c = c * Complex::new(phase.cos(), phase.sin());
            for i in 0..d {
                out[i] = out[i] + c * v[[i, k]];
            }
        }
        Ok(QuantumState { amplitudes: out })
    }
}

/// `exp(−i · delta · A) ψ` via the eigendecomposition of `A`.
pub fn step_unitary<F: Real>(
    state: &QuantumState<F>,
    a: &Array2<F>,
    delta: F,
) -> Result<QuantumState<F>> {
    if !(delta > F::zero()) {
        return Err(Error::validation("time step must be positive"));
    }
    Propagator::new(a)?.apply(state, F::one(), delta)
}

/// Occupation probabilities at `t_0, …, t_M`, one row per instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSequence<F> {
    populations: Array2<F>,
    delta: F,
}

impl<F: Real> PopulationSequence<F> {
    pub fn new(populations: Array2<F>, delta: F) -> Self {
        Self { populations, delta }
    }

    pub fn populations(&self) -> &Array2<F> {
        &self.populations
    }

    pub fn into_populations(self) -> Array2<F> {
        self.populations
    }

    /// Number of evolution steps `M`.
    pub fn steps(&self) -> usize {
        self.populations.nrows() - 1
    }

    pub fn nodes(&self) -> usize {
        self.populations.ncols()
    }

    pub fn delta(&self) -> F {
        self.delta
    }

    pub fn times(&self) -> Vec<F> {
        (0..=self.steps())
            .map(|k| self.delta * F::lit(k as f64))
            .collect()
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_sum_error(&self) -> F {
        self.populations
            .rows()
            .into_iter()
            .map(|r| (r.sum() - F::one()).abs())
            .fold(F::zero(), F::max)
    }
}

fn check_evolve_inputs<F: Real>(
    topology: &GraphTopology,
    couplings: &CouplingSequence,
    initial_node: usize,
    delta: F,
) -> Result<()> {
    if couplings.is_empty() {
        return Err(Error::validation("coupling sequence is empty"));
    }
    if initial_node == 0 || initial_node > topology.d() {
        return Err(Error::validation(format!(
            "initial node {initial_node} outside 1..={}",
            topology.d()
        )));
    }
    if !(delta > F::zero()) {
        return Err(Error::validation("time step must be positive"));
    }
    Ok(())
}

/// Evolves a node-localised particle through the piecewise-constant
/// couplings, recording populations before the first and after every step.
pub fn evolve<F: Real>(
    topology: &GraphTopology,
    couplings: &CouplingSequence,
    initial_node: usize,
    delta: F,
) -> Result<PopulationSequence<F>> {
    check_evolve_inputs(topology, couplings, initial_node, delta)?;
    let d = topology.d();
    let m = couplings.len();
    let propagator = Propagator::<F>::for_topology(topology)?;
    let mut state = QuantumState::localized(d, initial_node)?;
    let mut pops = Array2::zeros((m + 1, d));
    pops.row_mut(0).assign(&state.populations());
    for (k, &g) in couplings.values().iter().enumerate() {
        state = propagator.apply(&state, F::lit(g), delta)?;
        pops.row_mut(k + 1).assign(&state.populations());
    }
    Ok(PopulationSequence::new(pops, delta))
}

/// Same contract as [`evolve`], computed on the `d²`-dimensional vectorised
/// density matrix with a Taylor-series exponential of the Liouvillian.
/// Cost grows as `d⁶`; intended for small cross-check instances.
pub fn evolve_vectorized<F: Real>(
    topology: &GraphTopology,
    couplings: &CouplingSequence,
    initial_node: usize,
    delta: F,
) -> Result<PopulationSequence<F>> {
    check_evolve_inputs(topology, couplings, initial_node, delta)?;
    let d = topology.d();
    let m = couplings.len();
    let zero = Complex::new(F::zero(), F::zero());
    let mut lambda = Array1::from_elem(d * d, zero);
    let k0 = initial_node - 1;
    lambda[k0 + d * k0] = Complex::new(F::one(), F::zero());
    let read =
        |lambda: &Array1<Complex<F>>| Array1::from_iter((0..d).map(|s| lambda[s + d * s].re));

    let mut pops = Array2::zeros((m + 1, d));
    pops.row_mut(0).assign(&read(&lambda));
    for (k, &g) in couplings.values().iter().enumerate() {
        let l = liouvillian(&adjacency(topology, F::lit(g)))?;
        let prop = expm_complex(&l.mapv(|z| z * delta));
        let mut next = Array1::from_elem(d * d, zero);
        for i in 0..d * d {
            let mut acc = zero;
            for j in 0..d * d {
                acc = acc + prop[[i, j]] * lambda[j];
            }
            next[i] = acc;
        }
        lambda = next;
        pops.row_mut(k + 1).assign(&read(&lambda));
    }
    Ok(PopulationSequence::new(pops, delta))
}
