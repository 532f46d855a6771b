use serde::{Deserialize, Serialize};

use crate::error::{Result, TsrlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer over an ordered list of parameter tensors.
///
/// Moment buffers are allocated lazily on the first step and are tied to the
/// tensor order passed in; callers must present tensors in the same order on
/// every step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TsrlError::DimensionMismatch {
                expected: params.len(),
                actual: grads.len(),
                context: "optimizer tensor count",
            });
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.len() != g.len() {
                return Err(TsrlError::DimensionMismatch {
                    expected: p.len(),
                    actual: g.len(),
                    context: "optimizer tensor length",
                });
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second = self.first.clone();
                } else if self.first.len() != grads.len() {
                    return Err(TsrlError::contract(
                        "optimizer called with a different tensor layout",
                    ));
                }
                let t = self.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_parameter() {
        let mut p = [2.0];
        let mut opt = Optimizer::sgd(0.1);
        opt.step(vec![&mut p], vec![&[0.5]]).unwrap();
        assert_eq!(p[0], 2.0 - 0.1 * 0.5);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = [1.0, -1.0];
        let mut opt = Optimizer::adam(1e-3);
        opt.step(vec![&mut p], vec![&[3.0, -0.2]]).unwrap();
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = [0.3];
        let mut opt = Optimizer::adam(1e-2);
        for _ in 0..5 {
            opt.step(vec![&mut p], vec![&[0.0]]).unwrap();
        }
        assert_eq!(p[0], 0.3);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut p = [0.0; 3];
        let mut opt = Optimizer::adam(1e-3);
        for expected in 1..=4 {
            opt.step(vec![&mut p], vec![&[1.0, 2.0, 3.0]]).unwrap();
            assert_eq!(opt.steps(), expected);
        }
    }

    #[test]
    fn mismatched_layout_rejected() {
        let mut p = [0.0; 2];
        let mut opt = Optimizer::sgd(0.1);
        assert!(opt.step(vec![&mut p], vec![&[1.0]]).is_err());
    }
}
