use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::Result;
use crate::rng::stream;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// `max |a − n| / max(|a|, |n|, 1e-6)` over the probed parameters.
    pub max_rel_error: f64,
    pub probed: usize,
    /// Tensor holding the worst parameter.
    pub worst_tensor: usize,
}

/// Central finite differences on at least `count` parameters, chosen
/// round-robin over tensors (random entry within each), against the
/// analytic gradient of the dropout-free objective.
pub fn gradient_check<F: Real>(
    net: &Network<F>,
    x: &Array2<F>,
    batch: usize,
    labels: &[u8],
    eps: f64,
    count: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let (_, grads) = net.loss_and_grad(x.clone(), batch, labels, None)?;
    let mut rng = stream(seed);
    let tensors = net.params.tensors.len();
    let probes = count.max(tensors);
    let mut probe = net.clone();
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        probed: 0,
        worst_tensor: 0,
    };
    for k in 0..probes {
        let t = k % tensors;
        let (r, c) = net.params.tensors[t].dim();
        let idx = (rng.random_range(0..r), rng.random_range(0..c));
        let orig = net.params.tensors[t][idx];
        probe.params.tensors[t][idx] = orig + F::lit(eps);
        let up = probe.loss(x.clone(), batch, labels)?.as_f64();
        probe.params.tensors[t][idx] = orig - F::lit(eps);
        let down = probe.loss(x.clone(), batch, labels)?.as_f64();
        probe.params.tensors[t][idx] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.tensors[t][idx].as_f64();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_tensor = t;
        }
        out.probed += 1;
    }
    Ok(out)
}
