use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    m: Params<F>,
    v: Params<F>,
    step: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, like: &Params<F>) -> Self {
        Self {
            config,
            m: Params::zeros_like(like),
            v: Params::zeros_like(like),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient aborts without touching
    /// the weights or moments.
    pub fn step(&mut self, params: &mut Params<F>, grads: &Params<F>) -> Result<()> {
        if params.shapes() != grads.shapes() {
            return Err(Error::validation(
                "gradient shapes do not match the parameters",
            ));
        }
        if let Some((k, _)) = grads
            .tensors
            .iter()
            .enumerate()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "gradient of parameter tensor {k} at Adam step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = F::lit(1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let bc2 = F::lit(1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);
        let one = F::one();
        for (((w, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            ndarray::Zip::from(w)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn p(v: f64) -> Params<f64> {
        Params::new(vec![array![[v, -v], [0.5, 2.0]]])
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_weights() {
        let mut w = p(1.0);
        let before = w.clone();
        let mut adam = Adam::new(AdamConfig::default(), &w);
        let zero = Params::zeros_like(&w);
        adam.step(&mut w, &zero).unwrap();
        assert_eq!(w, before);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &w,
        );
        for _ in 0..10 {
            adam.step(&mut w, &p(3.0)).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut w = Params::new(vec![array![[0.0f64, 0.0]]]);
        let g = Params::new(vec![array![[0.3, -2.0]]]);
        let mut adam = Adam::new(AdamConfig::default(), &w);
        let mut last = w.clone();
        for _ in 0..5000 {
            last = w.clone();
            adam.step(&mut w, &g).unwrap();
        }
        let d0 = w.tensors[0][[0, 0]] - last.tensors[0][[0, 0]];
        let d1 = w.tensors[0][[0, 1]] - last.tensors[0][[0, 1]];
        assert!((d0 + 1e-3).abs() < 1e-3 * 1e-3);
        assert!((d1 - 1e-3).abs() < 1e-3 * 1e-3);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = p(1.0);
        let before = w.clone();
        let mut adam = Adam::new(AdamConfig::default(), &w);
        let mut g = p(0.1);
        g.tensors[0][[1, 1]] = f64::NAN;
        assert!(matches!(adam.step(&mut w, &g), Err(Error::NonFinite(_))));
        assert_eq!(w, before);
        assert_eq!(adam.steps_taken(), 0);
    }
}
