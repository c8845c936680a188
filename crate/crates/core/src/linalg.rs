//! Small dense linear-algebra kernels: symmetric eigendecomposition,
//! complex matrix exponential, and Gram–Schmidt orthonormalisation.

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::Real;

/// Eigenpairs of a real symmetric matrix: `a = V diag(values) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<F> {
    pub values: Array1<F>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: Array2<F>,
    pub sweeps: usize,
}

const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm<F: Real>(a: &Array2<F>) -> F {
    let n = a.nrows();
    let mut s = F::zero();
    for p in 0..n {
        for q in (p + 1)..n {
            s += F::lit(2.0) * a[[p, q]] * a[[p, q]];
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition.
///
/// Stops once the off-diagonal Frobenius norm drops below
/// `1e-12 · ‖a‖_F` (or the precision floor for `f32`).
pub fn symmetric_eigen<F: Real>(a: &Array2<F>) -> Result<SymmetricEigen<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::validation(
            "eigendecomposition needs a square matrix",
        ));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(
            "matrix passed to eigendecomposition".into(),
        ));
    }
    let mut m = a.clone();
    let mut v = Array2::<F>::eye(n);
    let frobenius = m.iter().map(|&x| x * x).sum::<F>().sqrt();
    let threshold = F::lit(1e-12).max(F::tolerance_floor()) * frobenius;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&m);
        if off <= threshold {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::EigenNonConvergence {
                sweeps,
                off_norm: off.as_f64(),
                frobenius: frobenius.as_f64(),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == F::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (F::lit(2.0) * apq);
                let t = if theta.abs() > F::lit(1e150).min(F::max_value().sqrt()) {
                    F::one() / (F::lit(2.0) * theta)
                } else {
                    let sign = if theta >= F::zero() {
                        F::one()
                    } else {
                        -F::one()
                    };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = Array1::from_iter((0..n).map(|i| m[[i, i]]));
    Ok(SymmetricEigen {
        values,
        vectors: v,
        sweeps,
    })
}

fn complex_matmul<F: Real>(a: &Array2<Complex<F>>, b: &Array2<Complex<F>>) -> Array2<Complex<F>> {
    let n = a.nrows();
    let k = a.ncols();
    let m = b.ncols();
    let mut out = Array2::from_elem((n, m), Complex::new(F::zero(), F::zero()));
    for i in 0..n {
        for l in 0..k {
            let ail = a[[i, l]];
            if ail.re == F::zero() && ail.im == F::zero() {
                continue;
            }
            for j in 0..m {
                out[[i, j]] = out[[i, j]] + ail * b[[l, j]];
            }
        }
    }
    out
}

fn one_norm<F: Real>(a: &Array2<Complex<F>>) -> F {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<F>())
        .fold(F::zero(), F::max)
}

/// `exp(a)` by scaling and squaring of a truncated Taylor series.
pub fn expm_complex<F: Real>(a: &Array2<Complex<F>>) -> Array2<Complex<F>> {
    let n = a.nrows();
    let norm = one_norm(a);
    let mut squarings = 0u32;
    let mut scale = F::one();
    while norm * scale > F::lit(0.5) {
        scale = scale * F::lit(0.5);
        squarings += 1;
    }
    let scaled = a.mapv(|z| z * scale);
    let eye = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Complex::new(F::one(), F::zero())
        } else {
            Complex::new(F::zero(), F::zero())
        }
    });
    let mut result = eye.clone();
    let mut term = eye;
    for k in 1..=30 {
        term = complex_matmul(&term, &scaled).mapv(|z| z / F::lit(k as f64));
        result = result + &term;
        if one_norm(&term) <= F::epsilon() * F::lit(0.01) {
            break;
        }
    }
    for _ in 0..squarings {
        result = complex_matmul(&result, &result);
    }
    result
}

/// Orthonormalises the columns of `a` in place (modified Gram–Schmidt).
/// A column that collapses numerically is replaced by a unit basis vector;
/// random inputs never hit that branch in practice.
pub fn orthonormalize_columns<F: Real>(a: &mut Array2<F>) {
    let (rows, cols) = a.dim();
    for j in 0..cols {
        for k in 0..j {
            let proj: F = (0..rows).map(|i| a[[i, j]] * a[[i, k]]).sum();
            for i in 0..rows {
                let aik = a[[i, k]];
                a[[i, j]] -= proj * aik;
            }
        }
        let norm = (0..rows).map(|i| a[[i, j]] * a[[i, j]]).sum::<F>().sqrt();
        if norm > F::tolerance_floor() {
            for i in 0..rows {
                a[[i, j]] /= norm;
            }
        } else {
            for i in 0..rows {
                a[[i, j]] = if i == j % rows { F::one() } else { F::zero() };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.random_range(-1.0..1.0);
                a[[i, j]] = x;
                a[[j, i]] = x;
            }
        }
        a
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        for (n, seed) in [(1, 0), (2, 1), (7, 2), (40, 3)] {
            let a = random_symmetric(n, seed);
            let e = symmetric_eigen(&a).unwrap();
            let lambda = Array2::from_diag(&e.values);
            let rec = e.vectors.dot(&lambda).dot(&e.vectors.t());
            let err = (&rec - &a).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(err < 1e-10, "n={n} err={err}");
            let ortho = e.vectors.t().dot(&e.vectors) - Array2::<f64>::eye(n);
            assert!(ortho.iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn jacobi_on_zero_and_f32() {
        let z = Array2::<f64>::zeros((4, 4));
        let e = symmetric_eigen(&z).unwrap();
        assert_eq!(e.sweeps, 0);
        let a = random_symmetric(6, 9).mapv(|x| x as f32);
        let e = symmetric_eigen(&a).unwrap();
        let rec = e
            .vectors
            .dot(&Array2::from_diag(&e.values))
            .dot(&e.vectors.t());
        assert!((&rec - &a).iter().all(|x| x.abs() < 1e-4));
    }

    #[test]
    fn expm_of_rotation_generator() {
        // exp([[0, -θ], [θ, 0]]) is a rotation by θ.
        let th = 0.7f64;
        let c = |x: f64| Complex::new(x, 0.0);
        let a = Array2::from_shape_vec((2, 2), vec![c(0.0), c(-th), c(th), c(0.0)]).unwrap();
        let e = expm_complex(&a);
        assert!((e[[0, 0]].re - th.cos()).abs() < 1e-14);
        assert!((e[[1, 0]].re - th.sin()).abs() < 1e-14);
        // Large norm exercises the squaring phase.
        let a = a.mapv(|z| z * 40.0);
        let e = expm_complex(&a);
        assert!((e[[0, 0]].re - (40.0 * th).cos()).abs() < 1e-11);
    }

    #[test]
    fn gram_schmidt_produces_orthonormal_columns() {
        let mut a = random_symmetric(5, 4);
        orthonormalize_columns(&mut a);
        let g = a.t().dot(&a) - Array2::<f64>::eye(5);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }
}
