//! Fully connected stack ending in two logits. Tensors come in pairs
//! `W (in × out)`, `b (1 × out)`.

use ndarray::{Array2, Axis};
use rand::Rng;

use super::Activation;
use crate::rng::Stream;
use crate::Real;

/// Inverted-dropout mask: entries are 0 or `1/(1−p)`.
pub(crate) fn dropout_mask<F: Real>(dim: (usize, usize), p: f64, rng: &mut Stream) -> Array2<F> {
    let keep = F::lit(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(dim, || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

pub(crate) fn add_bias<F: Real>(z: &mut Array2<F>, b: &Array2<F>) {
    let b = b.row(0);
    for mut row in z.rows_mut() {
        row += &b;
    }
}

pub(crate) fn column_sums<F: Real>(d: &Array2<F>) -> Array2<F> {
    d.sum_axis(Axis(0)).insert_axis(Axis(0))
}

#[derive(Debug, Clone)]
pub(crate) struct DenseTape<F> {
    /// Input of each layer, after dropout.
    inputs: Vec<Array2<F>>,
    /// Activation output of each hidden layer, before dropout.
    activations: Vec<Array2<F>>,
    masks: Vec<Option<Array2<F>>>,
}

pub(crate) fn dense_forward<F: Real>(
    tensors: &[Array2<F>],
    x: Array2<F>,
    activation: Activation,
    dropout: f64,
    mut rng: Option<&mut Stream>,
) -> (Array2<F>, DenseTape<F>) {
    let layers = tensors.len() / 2;
    let mut tape = DenseTape {
        inputs: Vec::with_capacity(layers),
        activations: Vec::with_capacity(layers),
        masks: Vec::with_capacity(layers),
    };
    let mut h = x;
    for l in 0..layers {
        let mut z = h.dot(&tensors[2 * l]);
        add_bias(&mut z, &tensors[2 * l + 1]);
        tape.inputs.push(h);
        if l + 1 == layers {
            return (z, tape);
        }
        z.mapv_inplace(|v| activation.apply(v));
        let mask = match rng.as_deref_mut() {
            Some(r) if dropout > 0.0 => Some(dropout_mask(z.dim(), dropout, r)),
            _ => None,
        };
        tape.activations.push(z.clone());
        if let Some(m) = &mask {
            z *= m;
        }
        tape.masks.push(mask);
        h = z;
    }
    unreachable!("a dense stack has at least one layer")
}

/// Accumulates parameter gradients into `grads` and returns `∂/∂x`.
pub(crate) fn dense_backward<F: Real>(
    tensors: &[Array2<F>],
    tape: &DenseTape<F>,
    dlogits: Array2<F>,
    activation: Activation,
    grads: &mut [Array2<F>],
) -> Array2<F> {
    let layers = tensors.len() / 2;
    let mut d = dlogits;
    for l in (0..layers).rev() {
        grads[2 * l] += &tape.inputs[l].t().dot(&d);
        grads[2 * l + 1] += &column_sums(&d);
        let mut dh = d.dot(&tensors[2 * l].t());
        if l > 0 {
            if let Some(m) = &tape.masks[l - 1] {
                dh *= m;
            }
            ndarray::Zip::from(&mut dh)
                .and(&tape.activations[l - 1])
                .for_each(|g, &h| *g *= activation.derivative_from_output(h));
        }
        d = dh;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn dropout_mask_mean_is_one() {
        let mut rng = stream(4);
        let m: Array2<f64> = dropout_mask((100, 100), 0.5, &mut rng);
        let mean = m.mean().unwrap();
        // 10⁴ Bernoulli(½)·2 entries: sd of the mean is 0.01.
        assert!((mean - 1.0).abs() < 0.03);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn train_mode_logits_match_eval_in_expectation() {
        // One hidden layer: logits are linear in the dropped activations,
        // so their mean over masks equals the eval-mode logits.
        let mut rng = stream(9);
        let mut draw = |r, c| Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0));
        let tensors: Vec<Array2<f64>> = vec![draw(3, 8), draw(1, 8), draw(8, 2), draw(1, 2)];
        let x = draw(1, 3);
        let (eval, _) = dense_forward(&tensors, x.clone(), Activation::Tanh, 0.5, None);
        let mut rng = stream(10);
        let n = 10_000;
        let mut sum = Array2::<f64>::zeros((1, 2));
        let mut sq = Array2::<f64>::zeros((1, 2));
        for _ in 0..n {
            let (z, _) = dense_forward(&tensors, x.clone(), Activation::Tanh, 0.5, Some(&mut rng));
            sum += &z;
            sq += &z.mapv(|v| v * v);
        }
        for j in 0..2 {
            let mean = sum[[0, j]] / n as f64;
            let var = sq[[0, j]] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - eval[[0, j]]).abs() < 3.0 * se,
                "{mean} vs {}",
                eval[[0, j]]
            );
        }
    }
}
