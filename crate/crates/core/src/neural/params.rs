use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Real;

/// Ordered list of parameter tensors. Biases are `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub tensors: Vec<Array2<F>>,
}

impl<F: Real> Params<F> {
    pub fn new(tensors: Vec<Array2<F>>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(other: &Params<F>) -> Self {
        Self {
            tensors: other
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.dim()))
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| t.dim()).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Values in tensor order, row-major within each tensor.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.iter().map(|v| v.as_f64()))
            .collect()
    }

    pub fn from_f64(shapes: &[(usize, usize)], values: &[f64]) -> Result<Self> {
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if total != values.len() {
            return Err(Error::DimensionMismatch {
                expected: total,
                found: values.len(),
            });
        }
        let mut offset = 0;
        let tensors = shapes
            .iter()
            .map(|&(r, c)| {
                let t = Array2::from_shape_fn((r, c), |(i, j)| F::lit(values[offset + i * c + j]));
                offset += r * c;
                t
            })
            .collect();
        Ok(Self { tensors })
    }

    /// Casts every value to another precision.
    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|v| G::lit(v.as_f64())))
                .collect(),
        }
    }
}
