use serde::{Deserialize, Serialize};

use super::FlError;
use crate::nn::DEFAULT_LR_DECAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Efpkd,
    Fedavg,
    Fedprox,
    Fedproto,
    Fedkd,
    IndependentCnn,
    IndependentKd,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Efpkd,
        Strategy::Fedavg,
        Strategy::Fedprox,
        Strategy::Fedproto,
        Strategy::Fedkd,
        Strategy::IndependentCnn,
        Strategy::IndependentKd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Efpkd => "efpkd",
            Strategy::Fedavg => "fedavg",
            Strategy::Fedprox => "fedprox",
            Strategy::Fedproto => "fedproto",
            Strategy::Fedkd => "fedkd",
            Strategy::IndependentCnn => "independent-cnn",
            Strategy::IndependentKd => "independent-kd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Whether the distillation term can be active.
    pub fn uses_teacher(self) -> bool {
        matches!(self, Strategy::Efpkd | Strategy::Fedkd | Strategy::IndependentKd)
    }

    pub fn aggregates_prototypes(self) -> bool {
        matches!(self, Strategy::Efpkd | Strategy::Fedproto)
    }

    /// Model aggregation after every round (the clients then sync to it).
    pub fn aggregates_models_every_round(self) -> bool {
        matches!(self, Strategy::Fedavg | Strategy::Fedprox | Strategy::Fedkd)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Distance between local and global prototypes in the regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeDistance {
    #[default]
    SquaredL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    pub strategy: Strategy,
    pub psi: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub student_lr: f64,
    pub lr_decay: f64,
    pub teacher_lr: f64,
    pub teacher_epochs: usize,
    pub availability_probability: f64,
    pub distance: PrototypeDistance,
    pub fedprox_mu: f64,
    /// Divide the prototype average by the summed weights only, dropping the extra `1/|M_k|`.
    pub normalized_prototype_mean: bool,
    /// Aggregate models after every round under `efpkd` too (degeneration checks).
    pub force_model_aggregation_every_round: bool,
    /// Record the full-shard loss after every local epoch instead of the mean batch loss.
    pub epoch_end_eval: bool,
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Efpkd,
            psi: 0.1,
            gamma: 1.0,
            zeta: 0.5,
            local_epochs: 5,
            batch_size: 32,
            rounds: 10,
            student_lr: 1e-4,
            lr_decay: DEFAULT_LR_DECAY,
            teacher_lr: 1e-3,
            teacher_epochs: 5,
            availability_probability: 0.9,
            distance: PrototypeDistance::SquaredL2,
            fedprox_mu: 0.01,
            normalized_prototype_mean: false,
            force_model_aggregation_every_round: false,
            epoch_end_eval: false,
            seed: 0,
        }
    }
}

/// Loss weights a strategy actually trains with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub psi: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        let bad = |m: String| Err(FlError::Config(m));
        if !(0.0..=1.0).contains(&self.psi) {
            return bad(format!("psi must lie in [0, 1], got {}", self.psi));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return bad(format!("zeta must be > 0, got {}", self.zeta));
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.availability_probability > 0.0 && self.availability_probability <= 1.0) {
            return bad(format!(
                "availability probability must lie in (0, 1], got {}",
                self.availability_probability
            ));
        }
        for (name, v) in [
            ("student_lr", self.student_lr),
            ("teacher_lr", self.teacher_lr),
            ("lr_decay", self.lr_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.fedprox_mu >= 0.0 && self.fedprox_mu.is_finite()) {
            return bad(format!("fedprox_mu must be >= 0, got {}", self.fedprox_mu));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        let (psi, gamma) = match self.strategy {
            Strategy::Efpkd => (self.psi, self.gamma),
            Strategy::Fedavg | Strategy::Fedprox | Strategy::IndependentCnn => (1.0, 0.0),
            Strategy::Fedkd | Strategy::IndependentKd => (self.psi, 0.0),
            Strategy::Fedproto => (1.0, self.gamma),
        };
        let mu = if self.strategy == Strategy::Fedprox { self.fedprox_mu } else { 0.0 };
        LossWeights { psi, gamma, mu }
    }

    pub fn aggregates_models_at(&self, round: usize) -> bool {
        match self.strategy {
            Strategy::Efpkd => self.force_model_aggregation_every_round || round == self.rounds,
            s => s.aggregates_models_every_round(),
        }
    }

    /// Participants start the round from the current global model.
    pub fn syncs_to_global(&self) -> bool {
        self.strategy.aggregates_models_every_round()
            || (self.strategy == Strategy::Efpkd && self.force_model_aggregation_every_round)
    }

    pub fn needs_teacher(&self) -> bool {
        self.strategy.uses_teacher() && self.loss_weights().psi < 1.0
    }
}

/// The composite local objective `psi * CE + (1 - psi) * KD + gamma * L_R`.
pub fn local_loss(entropy: f64, kd: f64, reg: f64, psi: f64, gamma: f64) -> f64 {
    psi * entropy + (1.0 - psi) * kd + gamma * reg
}
