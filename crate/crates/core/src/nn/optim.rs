use serde::{Deserialize, Serialize};

use super::params::{Gradients, ModelParams};
use super::NnError;

pub const DEFAULT_LR_DECAY: f64 = 0.97;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent with a per-round exponential learning-rate decay.
    SgdDecay,
    Adam,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub decay: f64,
    /// 1-based federated round used for the SGD decay.
    pub round: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn sgd(base_lr: f64, decay: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdDecay,
            base_lr,
            decay,
            round: 1,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn adam(lr: f64, n_params: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            base_lr: lr,
            decay: 1.0,
            round: 1,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn set_round(&mut self, round: u32) {
        self.round = round.max(1);
    }

    /// `base_lr * decay^(round - 1)` for SGD; the fixed rate for Adam.
    pub fn effective_lr(&self) -> f64 {
        match self.kind {
            OptimizerKind::SgdDecay => self.base_lr * self.decay.powi(self.round as i32 - 1),
            OptimizerKind::Adam => self.base_lr,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<(), NnError> {
        if grads.values.len() != params.total_count() {
            return Err(NnError::Dimension(format!(
                "{} gradients for {} parameters",
                grads.values.len(),
                params.total_count()
            )));
        }
        if let Some((i, v)) = grads.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient { index: i, value: *v });
        }
        self.step += 1;
        let lr = self.effective_lr();
        match self.kind {
            OptimizerKind::SgdDecay => {
                for (p, g) in params.values_mut().iter_mut().zip(&grads.values) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != grads.values.len() {
                    return Err(NnError::Dimension("adam moments do not match parameters".into()));
                }
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let values = params.values_mut();
                for (((p, g), m), v) in values
                    .iter_mut()
                    .zip(&grads.values)
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
