use ndarray::Array2;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::adam(),
            lr,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd { momentum },
            lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// Optimizer with per-parameter accumulators, matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: Vec<Option<Array2<T>>>,
    second: Vec<Option<Array2<T>>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter holding a gradient and clears the gradients.
    ///
    /// Non-finite gradients abort before any parameter is touched.
    pub fn step(&mut self, mut params: Vec<&mut Tensor<T>>) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("gradient of parameter {i}"),
                    });
                }
            }
        }
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.steps += 1;
        let lr = T::lit(self.config.lr);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = p.take_grad() else { continue };
            match self.config.kind {
                OptimizerKind::Sgd { momentum } => {
                    if momentum == 0.0 {
                        p.value_mut().scaled_add(-lr, &g);
                    } else {
                        let mu = T::lit(momentum);
                        let v = self.first[i].get_or_insert_with(|| Array2::zeros(g.dim()));
                        v.zip_mut_with(&g, |v, &g| *v = mu * *v + g);
                        p.value_mut().scaled_add(-lr, v);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                    let m = self.first[i].get_or_insert_with(|| Array2::zeros(g.dim()));
                    m.zip_mut_with(&g, |m, &g| *m = b1 * *m + (T::one() - b1) * g);
                    let v = self.second[i].get_or_insert_with(|| Array2::zeros(g.dim()));
                    v.zip_mut_with(&g, |v, &g| *v = b2 * *v + (T::one() - b2) * g * g);
                    let t = self.steps as i32;
                    let c1 = T::one() - b1.powi(t);
                    let c2 = T::one() - b2.powi(t);
                    let m = &*m;
                    let v = &*v;
                    ndarray::Zip::from(p.value_mut())
                        .and(m)
                        .and(v)
                        .for_each(|w, &m, &v| {
                            *w = *w - lr * (m / c1) / ((v / c2).sqrt() + eps);
                        });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_param(value: f64, grad: f64) -> Tensor<f64> {
        let mut t = Tensor::new(array![[value]], true);
        t.accumulate_grad(&array![[grad]]).unwrap();
        t
    }

    #[test]
    fn sgd_single_step() {
        let mut p = one_param(1.0, 1.0);
        Optimizer::new(OptimizerConfig::sgd(0.1, 0.0))
            .step(vec![&mut p])
            .unwrap();
        assert!((p.value()[[0, 0]] - 0.9).abs() < 1e-15);
        assert!(p.grad().is_none());
    }

    #[test]
    fn sgd_zero_lr_is_noop() {
        let mut p = one_param(1.25, 7.0);
        Optimizer::new(OptimizerConfig::sgd(0.0, 0.9))
            .step(vec![&mut p])
            .unwrap();
        assert_eq!(p.value()[[0, 0]], 1.25);
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.5));
        let mut p = one_param(0.0, 1.0);
        opt.step(vec![&mut p]).unwrap();
        p.accumulate_grad(&array![[1.0]]).unwrap();
        opt.step(vec![&mut p]).unwrap();
        // v1 = 1, v2 = 0.5 + 1 = 1.5
        assert!((p.value()[[0, 0]] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        let mut p = one_param(1.0, 1.0);
        Optimizer::new(OptimizerConfig::adam(0.001))
            .step(vec![&mut p])
            .unwrap();
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.value()[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut a = one_param(1.0, 1.0);
        let mut b = one_param(2.0, f64::NAN);
        let err = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0))
            .step(vec![&mut a, &mut b])
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(a.value()[[0, 0]], 1.0);
    }
}
