//! Soft-margin kernel SVM trained by SMO with maximal-violating-pair
//! selection on a precomputed kernel matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Polynomial {
        degree: u32,
        scale: f64,
        offset: f64,
    },
    Rbf {
        gamma: f64,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial {
                degree,
                scale,
                offset,
            } => {
                if !(2..=4).contains(&degree) {
                    return Err(Error::validation(format!(
                        "polynomial degree must be 2, 3 or 4, got {degree}"
                    )));
                }
                if !(scale.is_finite() && offset.is_finite()) {
                    return Err(Error::validation(
                        "polynomial scale and offset must be finite",
                    ));
                }
                Ok(())
            }
            KernelSpec::Rbf { gamma } => {
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(Error::validation("RBF gamma must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Kernel value from the inner product and the two squared norms.
    #[inline]
    fn from_dot<F: Real>(&self, dot: F, xx: F, yy: F) -> F {
        match *self {
            KernelSpec::Linear => dot,
            KernelSpec::Polynomial {
                degree,
                scale,
                offset,
            } => (F::lit(scale) * dot + F::lit(offset)).powi(degree as i32),
            KernelSpec::Rbf { gamma } => {
                let sq = (xx + yy - F::lit(2.0) * dot).max(F::zero());
                (-F::lit(gamma) * sq).exp()
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Polynomial { degree, .. } => format!("poly{degree}"),
            KernelSpec::Rbf { gamma } => format!("rbf(γ={gamma:.4e})"),
        }
    }
}

pub fn kernel_eval<F: Real>(spec: &KernelSpec, x: ArrayView1<F>, y: ArrayView1<F>) -> Result<F> {
    ensure_dim(x.len(), y.len())?;
    let dot = x.dot(&y);
    Ok(spec.from_dot(dot, x.dot(&x), y.dot(&y)))
}

/// Inner products between two point sets; any kernel matrix is an
/// elementwise map of it.
#[derive(Debug, Clone)]
pub struct GramCache<F> {
    dot: Array2<F>,
    left_sq: Array1<F>,
    right_sq: Array1<F>,
}

impl<F: Real> GramCache<F> {
    pub fn new(left: ArrayView2<F>, right: ArrayView2<F>) -> Result<Self> {
        ensure_dim(left.ncols(), right.ncols())?;
        let sq = |m: ArrayView2<F>| m.map_axis(Axis(1), |r| r.dot(&r));
        Ok(Self {
            dot: left.dot(&right.t()),
            left_sq: sq(left),
            right_sq: sq(right),
        })
    }

    pub fn kernel(&self, spec: &KernelSpec) -> Array2<F> {
        let mut k = self.dot.clone();
        for ((i, j), v) in k.indexed_iter_mut() {
            *v = spec.from_dot(*v, self.left_sq[i], self.right_sq[j]);
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    /// Stopping threshold on the maximal KKT violation `m − M`.
    pub tol: f64,
    /// Iteration cap; `None` means `max(10⁵, 100·n)`.
    pub max_iter: Option<usize>,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: None,
        }
    }
}

/// Dual solution on a precomputed kernel matrix.
#[derive(Debug, Clone)]
pub struct DualSolution<F> {
    pub alpha: Array1<F>,
    pub bias: F,
    pub iterations: usize,
    /// `m − M` at exit.
    pub violation: F,
    /// Dual objective `Σα − ½αᵀQα` sampled every `OBJECTIVE_STRIDE`
    /// iterations and at exit.
    pub objective_trace: Vec<f64>,
}

const OBJECTIVE_STRIDE: usize = 1000;
const TAU: f64 = 1e-12;

fn dual_objective<F: Real>(alpha: &Array1<F>, grad: &Array1<F>) -> f64 {
    // With G = Qα − e:  Σα − ½αᵀQα = −½ αᵀ(G − e).
    -0.5 * alpha
        .iter()
        .zip(grad.iter())
        .map(|(a, g)| a.as_f64() * (g.as_f64() - 1.0))
        .sum::<f64>()
}

/// SMO on `max Σα − ½ αᵀQα`, `Q_ij = y_i y_j K_ij`, `0 ≤ α ≤ C`, `yᵀα = 0`.
pub fn solve_dual<F: Real>(
    k: ArrayView2<F>,
    y: &[i8],
    c: f64,
    options: &SvmOptions,
) -> Result<DualSolution<F>> {
    let n = y.len();
    if k.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: k.len(),
        });
    }
    if n < 2 || !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::validation("SVM training needs both labels present"));
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::validation("SVM labels must be ±1"));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::validation("C must be positive"));
    }
    if !(options.tol.is_finite() && options.tol > 0.0) {
        return Err(Error::validation("tolerance must be positive"));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel matrix".into()));
    }
    let cap = options.max_iter.unwrap_or_else(|| 100_000.max(100 * n));
    let cf = F::lit(c);
    let tol = F::lit(options.tol);
    let yf: Vec<F> = y.iter().map(|&v| F::lit(v as f64)).collect();
    let mut alpha = Array1::<F>::zeros(n);
    let mut grad = Array1::<F>::from_elem(n, -F::one());
    let mut trace = vec![0.0];
    let mut iterations = 0;

    let in_up = |a: F, yy: i8| (yy == 1 && a < cf) || (yy == -1 && a > F::zero());
    let in_low = |a: F, yy: i8| (yy == 1 && a > F::zero()) || (yy == -1 && a < cf);

    let (violation, m_up, m_low) = loop {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut m_up = F::neg_infinity();
        let mut m_low = F::infinity();
        for t in 0..n {
            let v = -yf[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m_up {
                m_up = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < m_low {
                m_low = v;
                j = t;
            }
        }
        let gap = m_up - m_low;
        if i == usize::MAX || j == usize::MAX || gap <= tol {
            break (gap.max(F::zero()), m_up, m_low);
        }
        if iterations == cap {
            return Err(Error::SvmConvergence {
                iterations,
                violation: gap.as_f64(),
            });
        }
        iterations += 1;

        let curvature = {
            let a = k[[i, i]] + k[[j, j]] - F::lit(2.0) * k[[i, j]];
            if a > F::zero() {
                a
            } else {
                F::lit(TAU)
            }
        };
        let mut lambda = gap / curvature;
        let room_i = if y[i] == 1 { cf - alpha[i] } else { alpha[i] };
        let room_j = if y[j] == 1 { alpha[j] } else { cf - alpha[j] };
        let mut clip_i = false;
        let mut clip_j = false;
        if lambda >= room_i {
            lambda = room_i;
            clip_i = true;
        }
        if lambda >= room_j {
            if room_j < room_i {
                clip_i = false;
            }
            lambda = room_j;
            clip_j = true;
        }
        alpha[i] += yf[i] * lambda;
        alpha[j] -= yf[j] * lambda;
        // Snap to the bound that stopped the step so free/bound tests stay exact.
        if clip_i {
            alpha[i] = if y[i] == 1 { cf } else { F::zero() };
        }
        if clip_j {
            alpha[j] = if y[j] == 1 { F::zero() } else { cf };
        }
        let ki = k.row(i);
        let kj = k.row(j);
        for t in 0..n {
            grad[t] += yf[t] * lambda * (ki[t] - kj[t]);
        }
        if iterations % OBJECTIVE_STRIDE == 0 {
            let w = dual_objective(&alpha, &grad);
            log::trace!(
                "smo iter {iterations}: gap {:.3e}, dual {w:.6}",
                gap.as_f64()
            );
            trace.push(w);
        }
    };

    let mut free_sum = F::zero();
    let mut free_count = 0usize;
    for t in 0..n {
        if alpha[t] > F::zero() && alpha[t] < cf {
            free_sum += -yf[t] * grad[t];
            free_count += 1;
        }
    }
    let bias = if free_count > 0 {
        (free_sum / F::lit(free_count as f64)).max(m_low).min(m_up)
    } else if m_up.is_finite() && m_low.is_finite() {
        (m_up + m_low) / F::lit(2.0)
    } else if m_up.is_finite() {
        m_up
    } else {
        m_low
    };
    trace.push(dual_objective(&alpha, &grad));
    log::debug!(
        "smo finished after {iterations} iterations, violation {:.3e}, {free_count} free SVs",
        violation.as_f64()
    );
    Ok(DualSolution {
        alpha,
        bias,
        iterations,
        violation,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmTrainingMeta {
    pub n_train: usize,
    pub iterations: usize,
    pub violation: f64,
    pub dual_objective: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel<F> {
    pub kernel: KernelSpec,
    pub c: f64,
    pub bias: F,
    /// `α_i y_i` of each support vector.
    pub duals: Vec<F>,
    /// One support vector per row.
    pub support_vectors: Array2<F>,
    pub training_meta: SvmTrainingMeta,
}

impl<F: Real> SvmModel<F> {
    fn from_solution(
        x: ArrayView2<F>,
        y: &[i8],
        kernel: KernelSpec,
        c: f64,
        tol: f64,
        sol: &DualSolution<F>,
    ) -> Self {
        let idx: Vec<usize> = (0..y.len()).filter(|&t| sol.alpha[t] > F::zero()).collect();
        Self {
            kernel,
            c,
            bias: sol.bias,
            duals: idx
                .iter()
                .map(|&t| sol.alpha[t] * F::lit(y[t] as f64))
                .collect(),
            support_vectors: x.select(Axis(0), &idx),
            training_meta: SvmTrainingMeta {
                n_train: y.len(),
                iterations: sol.iterations,
                violation: sol.violation.as_f64(),
                dual_objective: *sol.objective_trace.last().expect("nonempty trace"),
                tol,
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.duals.len()
    }

    /// `Σ dualᵢ K(svᵢ, x) + b` for every row of `x`.
    pub fn decision_function(&self, x: ArrayView2<F>) -> Result<Array1<F>> {
        ensure_dim(self.input_dim(), x.ncols())?;
        let cache = GramCache::new(x, self.support_vectors.view())?;
        Ok(self.decision_from_kernel(cache.kernel(&self.kernel).view()))
    }

    /// Decision values from a precomputed `rows × n_support` kernel block.
    pub fn decision_from_kernel(&self, k: ArrayView2<F>) -> Array1<F> {
        let duals = Array1::from(self.duals.clone());
        k.dot(&duals).mapv(|v| v + self.bias)
    }

    /// Class 1 when the decision value is positive, class 0 otherwise.
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Vec<u8>> {
        Ok(self
            .decision_function(x)?
            .iter()
            .map(|&v| u8::from(v > F::zero()))
            .collect())
    }

    pub fn predict_one(&self, x: ArrayView1<F>) -> Result<(u8, F)> {
        ensure_dim(self.input_dim(), x.len())?;
        let mut f = self.bias;
        for (sv, &d) in self.support_vectors.rows().into_iter().zip(&self.duals) {
            f += d * kernel_eval(&self.kernel, sv, x)?;
        }
        Ok((u8::from(f > F::zero()), f))
    }
}

pub fn train_svm<F: Real>(
    x: ArrayView2<F>,
    y: &[i8],
    kernel: KernelSpec,
    c: f64,
    options: &SvmOptions,
) -> Result<SvmModel<F>> {
    kernel.validate()?;
    ensure_dim(x.nrows(), y.len())?;
    let k = GramCache::new(x, x)?.kernel(&kernel);
    let sol = solve_dual(k.view(), y, c, options)?;
    Ok(SvmModel::from_solution(x, y, kernel, c, options.tol, &sol))
}

/// Kernel/C grid: linear, polynomial degree 2–4 with `scale = 1/p`,
/// `offset = 1`, RBF with `γ ∈ {1/p, 10/p, 0.1/p}`; each with
/// `C ∈ {0.1, 1, 10, 100}`.
pub fn default_grid(p: usize) -> Vec<(KernelSpec, f64)> {
    let pf = p as f64;
    let mut kernels = vec![KernelSpec::Linear];
    for degree in 2..=4 {
        kernels.push(KernelSpec::Polynomial {
            degree,
            scale: 1.0 / pf,
            offset: 1.0,
        });
    }
    for g in [1.0, 10.0, 0.1] {
        kernels.push(KernelSpec::Rbf { gamma: g / pf });
    }
    kernels
        .into_iter()
        .flat_map(|k| [0.1, 1.0, 10.0, 100.0].map(|c| (k, c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmTrial {
    pub kernel: KernelSpec,
    pub c: f64,
    /// `None` when the solver hit its iteration cap.
    pub val_accuracy: Option<f64>,
    pub iterations: usize,
    pub n_support: usize,
}

#[derive(Debug, Clone)]
pub struct SvmSearch<F> {
    pub best: SvmModel<F>,
    pub best_val_accuracy: f64,
    pub trials: Vec<SvmTrial>,
}

fn percent_correct(pred: impl Iterator<Item = u8>, labels: &[u8]) -> f64 {
    let hits = pred.zip(labels).filter(|(p, l)| p == *l).count();
    100.0 * hits as f64 / labels.len() as f64
}

/// Trains every grid point, keeps the best validation accuracy (first in
/// grid order on ties). Inner products are computed once and shared.
pub fn grid_search<F: Real>(
    train_x: ArrayView2<F>,
    train_y: &[u8],
    val_x: ArrayView2<F>,
    val_y: &[u8],
    grid: &[(KernelSpec, f64)],
    options: &SvmOptions,
) -> Result<SvmSearch<F>> {
    ensure_dim(train_x.nrows(), train_y.len())?;
    ensure_dim(val_x.nrows(), val_y.len())?;
    if grid.is_empty() || val_y.is_empty() {
        return Err(Error::validation(
            "grid search needs a grid and validation data",
        ));
    }
    let signed: Vec<i8> = train_y
        .iter()
        .map(|&l| if l == 1 { 1 } else { -1 })
        .collect();
    let train_cache = GramCache::new(train_x, train_x)?;
    let val_cache = GramCache::new(val_x, train_x)?;
    let mut trials = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, SvmModel<F>)> = None;
    let mut last_err = None;
    let mut current: Option<(KernelSpec, Array2<F>, Array2<F>)> = None;
    for &(kernel, c) in grid {
        kernel.validate()?;
        if current
            .as_ref()
            .map(|(k, _, _)| *k != kernel)
            .unwrap_or(true)
        {
            current = Some((
                kernel,
                train_cache.kernel(&kernel),
                val_cache.kernel(&kernel),
            ));
        }
        let (_, k_train, k_val) = current.as_ref().expect("set above");
        match solve_dual(k_train.view(), &signed, c, options) {
            Ok(sol) => {
                let coef: Array1<F> = sol
                    .alpha
                    .iter()
                    .zip(&signed)
                    .map(|(&a, &s)| a * F::lit(s as f64))
                    .collect();
                let dec = k_val.dot(&coef).mapv(|v| v + sol.bias);
                let acc = percent_correct(dec.iter().map(|&v| u8::from(v > F::zero())), val_y);
                let n_support = sol.alpha.iter().filter(|&&a| a > F::zero()).count();
                log::info!(
                    "svm {} C={c}: val {acc:.2}% ({n_support} SVs, {} iters)",
                    kernel.label(),
                    sol.iterations
                );
                trials.push(SvmTrial {
                    kernel,
                    c,
                    val_accuracy: Some(acc),
                    iterations: sol.iterations,
                    n_support,
                });
                if best.as_ref().map(|(b, _)| acc > *b).unwrap_or(true) {
                    let model =
                        SvmModel::from_solution(train_x, &signed, kernel, c, options.tol, &sol);
                    best = Some((acc, model));
                }
            }
            Err(e @ Error::SvmConvergence { .. }) => {
                log::warn!("svm {} C={c}: {e}", kernel.label());
                if let Error::SvmConvergence { iterations, .. } = e {
                    trials.push(SvmTrial {
                        kernel,
                        c,
                        val_accuracy: None,
                        iterations,
                        n_support: 0,
                    });
                }
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((acc, model)) => Ok(SvmSearch {
            best: model,
            best_val_accuracy: acc,
            trials,
        }),
        None => Err(last_err.expect("nonempty grid")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn opts(tol: f64) -> SvmOptions {
        SvmOptions {
            tol,
            max_iter: None,
        }
    }

    /// Projection onto `{0 ≤ α ≤ C, yᵀα = 0}` by bisection on the multiplier.
    fn project(z: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
        let h = |nu: f64| -> f64 {
            z.iter()
                .zip(y)
                .map(|(zi, yi)| (zi - nu * yi).clamp(0.0, c) * yi)
                .sum()
        };
        let bound = z.iter().fold(0.0f64, |m, v| m.max(v.abs())) + c;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let nu = 0.5 * (lo + hi);
        for ((o, zi), yi) in out.iter_mut().zip(z).zip(y) {
            *o = (zi - nu * yi).clamp(0.0, c);
        }
    }

    fn objective(alpha: &[f64], q: &Array2<f64>) -> f64 {
        let a = Array1::from(alpha.to_vec());
        a.sum() - 0.5 * a.dot(&q.dot(&a))
    }

    /// Independent oracle: accelerated projected gradient ascent on the dual.
    fn oracle_dual(k: &Array2<f64>, y: &[i8], c: f64) -> f64 {
        let n = y.len();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let q = Array2::from_shape_fn((n, n), |(i, j)| yf[i] * yf[j] * k[[i, j]]);
        let lip = q.diag().sum().max(1e-9);
        let mut a = vec![0.0; n];
        let mut prev = vec![0.0; n];
        let mut look = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut t = 1.0f64;
        for _ in 0..30_000 {
            for i in 0..n {
                let g: f64 = (0..n).map(|j| q[[i, j]] * look[j]).sum();
                z[i] = look[i] + (1.0 - g) / lip;
            }
            prev.copy_from_slice(&a);
            project(&z, &yf, c, &mut a);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            for i in 0..n {
                look[i] = a[i] + (t - 1.0) / t_next * (a[i] - prev[i]);
            }
            t = t_next;
        }
        objective(&a, &q)
    }

    fn kkt_holds(model_dec: &Array1<f64>, y: &[i8], alpha: &Array1<f64>, c: f64, tol: f64) -> bool {
        (0..y.len()).all(|i| {
            let m = y[i] as f64 * model_dec[i];
            if alpha[i] <= 0.0 {
                m >= 1.0 - tol - 1e-9
            } else if alpha[i] >= c {
                m <= 1.0 + tol + 1e-9
            } else {
                (m - 1.0).abs() <= tol + 1e-9
            }
        })
    }

    #[test]
    fn kernel_examples() {
        let x = array![1.0, 2.0];
        let y = array![3.0, 4.0];
        assert_eq!(
            kernel_eval(&KernelSpec::Linear, x.view(), y.view()).unwrap(),
            11.0
        );
        let rbf = KernelSpec::Rbf { gamma: 0.3 };
        assert_eq!(kernel_eval(&rbf, x.view(), x.view()).unwrap(), 1.0);
        let poly = KernelSpec::Polynomial {
            degree: 2,
            scale: 1.0,
            offset: 1.0,
        };
        let e0 = array![1.0, 0.0];
        let e1 = array![0.0, 1.0];
        assert_eq!(kernel_eval(&poly, e0.view(), e1.view()).unwrap(), 1.0);
        assert!(kernel_eval(&poly, e0.view(), array![1.0].view()).is_err());
        assert!(KernelSpec::Polynomial {
            degree: 5,
            scale: 1.0,
            offset: 1.0
        }
        .validate()
        .is_err());
        assert!(KernelSpec::Rbf { gamma: 0.0 }.validate().is_err());
    }

    #[test]
    fn gram_cache_matches_pointwise() {
        let mut rng = stream(3);
        let a: Array2<f64> = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let cache = GramCache::new(a.view(), b.view()).unwrap();
        for spec in default_grid(3).iter().map(|(k, _)| *k) {
            let k = cache.kernel(&spec);
            for i in 0..5 {
                for j in 0..4 {
                    let direct = kernel_eval(&spec, a.row(i), b.row(j)).unwrap();
                    assert!((k[[i, j]] - direct).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_point_boundary() {
        let x: Array2<f64> = array![[0.0], [1.0]];
        let m = train_svm(x.view(), &[-1, 1], KernelSpec::Linear, 1e6, &opts(1e-9)).unwrap();
        let (c0, f0) = m.predict_one(array![0.0].view()).unwrap();
        let (c1, _) = m.predict_one(array![1.0].view()).unwrap();
        let (_, mid) = m.predict_one(array![0.5].view()).unwrap();
        assert_eq!((c0, c1), (0, 1));
        assert!(mid.abs() < 1e-8);
        assert!((f0 + 1.0).abs() < 1e-8);
        assert!(m.duals.iter().sum::<f64>().abs() < 1e-8);
    }

    fn xor() -> (Array2<f64>, Vec<i8>) {
        (
            array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]],
            vec![-1, -1, 1, 1],
        )
    }

    #[test]
    fn xor_with_rbf_against_grid_oracle() {
        let (x, y) = xor();
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let c = 10.0;
        let m = train_svm(x.view(), &y, kernel, c, &opts(1e-8)).unwrap();
        let pred = m.predict(x.view()).unwrap();
        assert_eq!(pred, vec![0, 0, 1, 1]);

        // Brute-force dual: grid over α₁..α₃, α₄ fixed by yᵀα = 0, then refine.
        let k = GramCache::new(x.view(), x.view()).unwrap().kernel(&kernel);
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let q = Array2::from_shape_fn((4, 4), |(i, j)| yf[i] * yf[j] * k[[i, j]]);
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        let mut centre = [c / 2.0; 3];
        let mut half = c / 2.0;
        for _ in 0..6 {
            let steps = 40;
            for a in 0..=steps {
                for b in 0..=steps {
                    for d in 0..=steps {
                        let v = [
                            centre[0] - half + 2.0 * half * a as f64 / steps as f64,
                            centre[1] - half + 2.0 * half * b as f64 / steps as f64,
                            centre[2] - half + 2.0 * half * d as f64 / steps as f64,
                        ];
                        if v.iter().any(|&t| !(0.0..=c).contains(&t)) {
                            continue;
                        }
                        let a4 = -(yf[0] * v[0] + yf[1] * v[1] + yf[2] * v[2]) * yf[3];
                        if !(0.0..=c).contains(&a4) {
                            continue;
                        }
                        let w = objective(&[v[0], v[1], v[2], a4], &q);
                        if w > best.0 {
                            best = (w, v);
                        }
                    }
                }
            }
            centre = best.1;
            half /= 8.0;
        }
        let smo = m.training_meta.dual_objective;
        assert!(
            (smo - best.0).abs() / best.0.abs() < 1e-3,
            "{smo} vs {}",
            best.0
        );
    }

    #[test]
    fn separable_margin_matches_angle_oracle() {
        let mut rng = stream(21);
        let mut pts = Vec::new();
        let mut y = Vec::new();
        while pts.len() < 24 {
            let p: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s = p[0] + 0.5 * p[1] - 0.1;
            if s.abs() < 0.15 {
                continue;
            }
            pts.push(p);
            y.push(if s > 0.0 { 1 } else { -1 });
        }
        let x = Array2::from_shape_fn((pts.len(), 2), |(i, j)| pts[i][j]);
        let m = train_svm(x.view(), &y, KernelSpec::Linear, 1e6, &opts(1e-9)).unwrap();
        assert!(m
            .predict(x.view())
            .unwrap()
            .iter()
            .zip(&y)
            .all(|(p, l)| (*p == 1) == (*l == 1)));
        let w = m.support_vectors.t().dot(&Array1::from(m.duals.clone()));
        let margin = 1.0 / w.dot(&w).sqrt();

        let margin_at = |th: f64| {
            let (c, s) = (th.cos(), th.sin());
            let mut lo_pos = f64::INFINITY;
            let mut hi_neg = f64::NEG_INFINITY;
            for (p, &l) in pts.iter().zip(&y) {
                let v = c * p[0] + s * p[1];
                if l == 1 {
                    lo_pos = lo_pos.min(v);
                } else {
                    hi_neg = hi_neg.max(v);
                }
            }
            (lo_pos - hi_neg) / 2.0
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let n = 100_000;
        for i in 0..n {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            let v = margin_at(th);
            if v > best.0 {
                best = (v, th);
            }
        }
        let mut step = std::f64::consts::TAU / n as f64;
        for _ in 0..40 {
            for th in [best.1 - step, best.1 + step] {
                let v = margin_at(th);
                if v > best.0 {
                    best = (v, th);
                }
            }
            step /= 2.0;
        }
        assert!((margin - best.0).abs() < 1e-3, "{margin} vs {}", best.0);
    }

    #[test]
    fn margin_vectors_sit_on_the_margin() {
        let mut rng = stream(5);
        let x = Array2::from_shape_fn((30, 2), |_| rng.random_range(-1.0..1.0));
        let x: Array2<f64> = x;
        let y: Vec<i8> = x
            .rows()
            .into_iter()
            .map(|r| if r[0] + r[1] > 0.0 { 1 } else { -1 })
            .collect();
        let c = 1.0;
        let tol = 1e-6;
        let m: SvmModel<f64> = train_svm(x.view(), &y, KernelSpec::Linear, c, &opts(tol)).unwrap();
        let mut seen = 0;
        for (sv, d) in m.support_vectors.rows().into_iter().zip(&m.duals) {
            if d.abs() < c - 1e-9 {
                let (_, f) = m.predict_one(sv).unwrap();
                assert!((f.abs() - 1.0).abs() < 1e-3);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn label_flip_negates_decisions() {
        let mut rng = stream(8);
        let x: Array2<f64> = Array2::from_shape_fn((16, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<i8> = (0..16).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let flipped: Vec<i8> = y.iter().map(|v| -v).collect();
        let k = KernelSpec::Rbf { gamma: 1.0 };
        let a = train_svm(x.view(), &y, k, 1.0, &opts(1e-10)).unwrap();
        let b = train_svm(x.view(), &flipped, k, 1.0, &opts(1e-10)).unwrap();
        let da = a.decision_function(x.view()).unwrap();
        let db = b.decision_function(x.view()).unwrap();
        for (u, v) in da.iter().zip(db.iter()) {
            assert!((u + v).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let x: Array2<f64> = array![[0.0], [1.0]];
        assert!(train_svm(x.view(), &[1, 1], KernelSpec::Linear, 1.0, &opts(1e-3)).is_err());
        assert!(train_svm(x.view(), &[1, -1], KernelSpec::Linear, 0.0, &opts(1e-3)).is_err());
        assert!(train_svm(x.view(), &[1], KernelSpec::Linear, 1.0, &opts(1e-3)).is_err());
        let m = train_svm(x.view(), &[-1, 1], KernelSpec::Linear, 1.0, &opts(1e-3)).unwrap();
        assert!(m.predict(array![[0.0, 1.0]].view()).is_err());
    }

    #[test]
    fn iteration_cap_reports_violation() {
        let mut rng = stream(2);
        let x = Array2::from_shape_fn((40, 2), |_| rng.random_range(-1.0..1.0));
        let y: Vec<i8> = (0..40).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let o = SvmOptions {
            tol: 1e-6,
            max_iter: Some(3),
        };
        match train_svm(x.view(), &y, KernelSpec::Linear, 10.0, &o) {
            Err(Error::SvmConvergence {
                iterations,
                violation,
            }) => {
                assert_eq!(iterations, 3);
                assert!(violation > 1e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_search_prefers_nonlinear_kernel_on_xor_cloud() {
        let mut rng = stream(11);
        let mk = |rng: &mut crate::rng::Stream, n: usize| {
            let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            let y: Vec<u8> = x
                .rows()
                .into_iter()
                .map(|r| u8::from(r[0] * r[1] > 0.0))
                .collect();
            (x, y)
        };
        let (tx, ty) = mk(&mut rng, 120);
        let (vx, vy) = mk(&mut rng, 80);
        let grid = default_grid(2);
        let s = grid_search(tx.view(), &ty, vx.view(), &vy, &grid, &opts(1e-3)).unwrap();
        assert_eq!(s.trials.len(), grid.len());
        assert!(s.best_val_accuracy > 85.0);
        assert_ne!(s.best.kernel, KernelSpec::Linear);
        let direct = s.best.predict(vx.view()).unwrap();
        let acc = percent_correct(direct.into_iter(), &vy);
        assert!((acc - s.best_val_accuracy).abs() < 1e-9);
    }

    #[test]
    fn model_json_round_trip() {
        let (x, y) = xor();
        let m = train_svm(
            x.view(),
            &y,
            KernelSpec::Rbf { gamma: 1.0 },
            10.0,
            &opts(1e-6),
        )
        .unwrap();
        let back: SvmModel<f64> =
            serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn kkt_and_oracle_on_small_instances(
            seed in 0u64..10_000,
            n in 4usize..=12,
            kind in 0usize..3,
            c in prop::sample::select(vec![0.1, 1.0, 10.0]),
        ) {
            let mut rng = stream(seed);
            let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
            let mut y: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            y[0] = 1;
            y[1] = -1;
            let kernel = [
                KernelSpec::Linear,
                KernelSpec::Polynomial { degree: 3, scale: 1.0 / 3.0, offset: 1.0 },
                KernelSpec::Rbf { gamma: 1.0 },
            ][kind];
            let tol = 1e-6;
            let k = GramCache::new(x.view(), x.view()).unwrap().kernel(&kernel);
            let sol = solve_dual(k.view(), &y, c, &opts(tol)).unwrap();

            let ya: f64 = sol.alpha.iter().zip(&y).map(|(a, &s)| a * s as f64).sum();
            prop_assert!(ya.abs() < 1e-8);
            prop_assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            prop_assert!(sol.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));

            let coef: Array1<f64> = sol.alpha.iter().zip(&y).map(|(a, &s)| a * s as f64).collect();
            let dec = k.dot(&coef).mapv(|v| v + sol.bias);
            prop_assert!(kkt_holds(&dec, &y, &sol.alpha, c, tol));

            let w = *sol.objective_trace.last().unwrap();
            let oracle = oracle_dual(&k, &y, c);
            prop_assert!((w - oracle).abs() <= 1e-3 * oracle.abs().max(1e-9), "{} vs {}", w, oracle);
        }
    }
}
