use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_models, sample_availability};
use super::client::{client_update, pretrain_teacher, stream, ClientState, ClientUpdate, Purpose};
use super::config::RoundConfig;
use super::objective::{global_objective_value, objective_terms};
use super::prototypes::{aggregate_prototypes, infer_all, PrototypeSet};
use super::FlError;
use crate::data::{EncodedDataset, PartitionPlan};
use crate::nn::{ModelParams, NetworkSpec, OptimizerState, Tensor};

/// Owner id of server-side streams.
const SERVER: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecs {
    pub teacher: NetworkSpec,
    pub student: NetworkSpec,
}

#[derive(Debug, Clone)]
pub struct GlobalState {
    pub prototypes: PrototypeSet,
    /// Absent under `efpkd` until the final round.
    pub model: Option<ModelParams>,
    pub round: usize,
    pub seed: u64,
}

/// Bytes that crossed the client/server boundary in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransferLedger {
    pub prototype_bytes_up: u64,
    pub prototype_bytes_down: u64,
    pub model_bytes_up: u64,
    pub model_bytes_down: u64,
}

impl TransferLedger {
    pub fn model_bytes(&self) -> u64 {
        self.model_bytes_up + self.model_bytes_down
    }

    pub fn prototype_bytes(&self) -> u64 {
        self.prototype_bytes_up + self.prototype_bytes_down
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub participants: Vec<usize>,
    pub ledger: TransferLedger,
    /// Mean over participants of their last-epoch loss.
    pub mean_local_loss: f64,
    /// `(client, loss per epoch)` for every participant.
    pub epoch_losses: Vec<(usize, Vec<f64>)>,
    pub global_prototype_classes: usize,
    pub global_model_present: bool,
    pub objective: f64,
    /// Test accuracy of the global model, or the mean over personal models.
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub global: GlobalState,
    pub clients: Vec<ClientState>,
    pub specs: ModelSpecs,
    pub reports: Vec<RoundReport>,
    /// Initial model download to every client before round 1.
    pub init_model_bytes: u64,
    pub teacher_losses: Vec<Vec<f64>>,
}

fn model_bytes(p: &ModelParams) -> u64 {
    8 * (p.total_count() + p.buffers().len()) as u64
}

/// Predicted class per row of `[N, d]` features.
pub fn predict(spec: &NetworkSpec, params: &ModelParams, features: &Tensor) -> Result<Vec<usize>, FlError> {
    let (logits, _) = infer_all(spec, params, features)?;
    Ok(logits.argmax_rows())
}

fn accuracy(spec: &NetworkSpec, params: &ModelParams, test: &EncodedDataset) -> Result<f64, FlError> {
    let pred = predict(spec, params, &test.features)?;
    let hits = pred.iter().zip(&test.labels).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / test.len().max(1) as f64)
}

/// Builds clients: shards, shared student initialisation and, when the
/// strategy distils, a pretrained frozen teacher with cached logits.
pub fn init_clients(
    train: &EncodedDataset,
    plan: &PartitionPlan,
    specs: &ModelSpecs,
    cfg: &RoundConfig,
) -> Result<(Vec<ClientState>, Vec<Vec<f64>>), FlError> {
    let student_init = ModelParams::init(&specs.student, &mut stream(cfg.seed, SERVER, 0, Purpose::StudentInit))?;
    let needs_teacher = cfg.needs_teacher();
    let built: Vec<(ClientState, Vec<f64>)> = plan
        .client_shards
        .par_iter()
        .enumerate()
        .map(|(id, shard)| -> Result<_, FlError> {
            if shard.is_empty() {
                return Err(FlError::Config(format!("client {id} has an empty shard")));
            }
            let features = train.features.gather_rows(shard);
            let labels: Vec<usize> = shard.iter().map(|&i| train.labels[i]).collect();
            let (teacher, teacher_logits, losses) = if needs_teacher {
                let mut t = ModelParams::init(&specs.teacher, &mut stream(cfg.seed, id as u64, 0, Purpose::TeacherInit))?;
                let losses = pretrain_teacher(
                    id,
                    &specs.teacher,
                    &mut t,
                    &features,
                    &labels,
                    train.label_mode,
                    cfg.teacher_epochs,
                    cfg.teacher_lr,
                    cfg.batch_size,
                    cfg.seed,
                )?;
                let (logits, _) = infer_all(&specs.teacher, &t, &features)?;
                (Some(t), Some(logits), losses)
            } else {
                (None, None, Vec::new())
            };
            Ok((
                ClientState {
                    id,
                    shard: shard.clone(),
                    features,
                    labels,
                    label_mode: train.label_mode,
                    alpha: false,
                    teacher,
                    teacher_logits,
                    student: student_init.clone(),
                    optimizer: OptimizerState::sgd(cfg.student_lr, cfg.lr_decay),
                    prototypes: PrototypeSet::empty(specs.student.embedding_dim()),
                },
                losses,
            ))
        })
        .collect::<Result<_, _>>()?;
    Ok(built.into_iter().unzip())
}

/// Runs the federated protocol for `cfg.rounds` rounds.
pub fn run_training(
    train: &EncodedDataset,
    plan: &PartitionPlan,
    specs: &ModelSpecs,
    cfg: &RoundConfig,
    eval: Option<&EncodedDataset>,
) -> Result<TrainingRun, FlError> {
    cfg.validate()?;
    specs.student.validate()?;
    if cfg.needs_teacher() {
        specs.teacher.validate()?;
        if specs.teacher.n_classes() != specs.student.n_classes() {
            return Err(FlError::Config("teacher and student disagree on the class count".into()));
        }
    }
    let (mut clients, teacher_losses) = init_clients(train, plan, specs, cfg)?;
    let init_model_bytes = clients.len() as u64 * model_bytes(&clients[0].student);
    let mut global = GlobalState {
        prototypes: PrototypeSet::empty(specs.student.embedding_dim()),
        model: None,
        round: 0,
        seed: cfg.seed,
    };
    let mut reports = Vec::with_capacity(cfg.rounds);

    for q in 1..=cfg.rounds {
        let flags = sample_availability(
            clients.len(),
            cfg.availability_probability,
            &mut stream(cfg.seed, SERVER, q as u64, Purpose::Availability),
        );
        let mut ledger = TransferLedger::default();
        for (c, &a) in clients.iter_mut().zip(&flags) {
            c.alpha = a;
            if !a {
                c.prototypes = PrototypeSet::empty(specs.student.embedding_dim());
                continue;
            }
            if cfg.syncs_to_global() {
                if let Some(g) = &global.model {
                    c.student = g.clone();
                    ledger.model_bytes_down += model_bytes(g);
                }
            }
            if cfg.strategy.aggregates_prototypes() {
                ledger.prototype_bytes_down += global.prototypes.wire_bytes();
            }
        }

        let snapshot = &global.prototypes;
        let updates: Vec<ClientUpdate> = clients
            .par_iter_mut()
            .filter(|c| c.alpha)
            .map(|c| client_update(c, &specs.student, snapshot, cfg, q))
            .collect::<Result<_, _>>()?;

        for u in &updates {
            if let Some(p) = &u.prototypes {
                ledger.prototype_bytes_up += p.wire_bytes();
            }
            if let Some(m) = &u.model {
                ledger.model_bytes_up += model_bytes(m);
            }
        }
        if cfg.strategy.aggregates_prototypes() {
            let sets: Vec<PrototypeSet> = updates.iter().filter_map(|u| u.prototypes.clone()).collect();
            let alphas = vec![true; sets.len()];
            global.prototypes = aggregate_prototypes(&sets, &alphas, cfg.normalized_prototype_mean)?;
        }
        if cfg.aggregates_models_at(q) {
            let models: Vec<&ModelParams> = updates.iter().filter_map(|u| u.model.as_ref()).collect();
            let sizes: Vec<usize> = updates.iter().filter(|u| u.model.is_some()).map(|u| clients[u.client].len()).collect();
            global.model = Some(aggregate_models(&models, &sizes, &vec![true; models.len()])?);
        }
        global.round = q;

        let terms = objective_terms(&clients, &specs.student)?;
        let objective = global_objective_value(&terms, &global.prototypes, cfg.loss_weights().gamma);
        let test_accuracy = match eval {
            None => None,
            Some(test) => Some(match &global.model {
                Some(g) => accuracy(&specs.student, g, test)?,
                None => {
                    let accs = clients
                        .par_iter()
                        .map(|c| accuracy(&specs.student, &c.student, test))
                        .collect::<Result<Vec<_>, _>>()?;
                    accs.iter().sum::<f64>() / accs.len() as f64
                }
            }),
        };
        let last_losses: Vec<f64> = updates.iter().filter_map(|u| u.epoch_losses.last().copied()).collect();
        reports.push(RoundReport {
            round: q,
            participants: updates.iter().map(|u| u.client).collect(),
            ledger,
            mean_local_loss: if last_losses.is_empty() {
                0.0
            } else {
                last_losses.iter().sum::<f64>() / last_losses.len() as f64
            },
            epoch_losses: updates.iter().map(|u| (u.client, u.epoch_losses.clone())).collect(),
            global_prototype_classes: global.prototypes.len(),
            global_model_present: global.model.is_some(),
            objective,
            test_accuracy,
        });
    }

    Ok(TrainingRun {
        global,
        clients,
        specs: specs.clone(),
        reports,
        init_model_bytes,
        teacher_losses,
    })
}
