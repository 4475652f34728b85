use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LossWeights, RoundConfig};
use super::prototypes::{batch_regularization, infer_all, prototypes_from_embeddings, regularization_term, PrototypeSet};
use super::FlError;
use crate::nn::{
    backward, forward_train, loss_kd, loss_supervised, LabelMode, ModelParams, NetworkSpec, OptimizerState, Tensor,
};

/// What a random stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Purpose {
    StudentInit = 1,
    TeacherInit = 2,
    TeacherBatches = 3,
    StudentBatches = 4,
    Availability = 5,
}

/// Independent ChaCha stream keyed by `(seed, owner, round, purpose)`, so a
/// client's draws never depend on what other clients or strategies consumed.
pub(crate) fn stream(seed: u64, owner: u64, round: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&owner.to_le_bytes());
    key[16..24].copy_from_slice(&round.to_le_bytes());
    key[24..].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// One participant: its shard, frozen teacher and trainable student.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Indices into the training set.
    pub shard: Vec<usize>,
    /// `[n, d]` rows of the shard.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub label_mode: LabelMode,
    pub alpha: bool,
    pub teacher: Option<ModelParams>,
    /// Infer-mode teacher outputs on the shard, row-aligned with `features`.
    pub teacher_logits: Option<Tensor>,
    pub student: ModelParams,
    pub optimizer: OptimizerState,
    pub prototypes: PrototypeSet,
}

impl ClientState {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class sample counts of the shard.
    pub fn class_count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&y| y == class).count()
    }
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client: usize,
    pub prototypes: Option<PrototypeSet>,
    pub model: Option<ModelParams>,
    /// One loss value per local epoch.
    pub epoch_losses: Vec<f64>,
}

/// Shuffled index batches covering `0..n`; the last batch may be short.
pub(crate) fn epoch_batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

fn batch_input(features: &Tensor, idx: &[usize]) -> Result<Tensor, FlError> {
    let d = features.row_len();
    Ok(features.gather_rows(idx).reshape(vec![idx.len(), 1, d])?)
}

fn diverged(client: usize, round: usize, what: &str, value: f64) -> FlError {
    FlError::Divergence {
        client,
        round,
        message: format!("{what} became {value}"),
    }
}

/// Supervised-only training of a teacher with Adam; returns the mean batch loss per epoch.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_teacher(
    client: usize,
    spec: &NetworkSpec,
    params: &mut ModelParams,
    features: &Tensor,
    labels: &[usize],
    mode: LabelMode,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>, FlError> {
    if labels.is_empty() {
        return Err(FlError::Config(format!("client {client} has an empty shard")));
    }
    let mut opt = OptimizerState::adam(lr, params.total_count());
    let mut rng = stream(seed, client as u64, 0, Purpose::TeacherBatches);
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut total = 0.0;
        let batches = epoch_batches(labels.len(), batch_size, &mut rng);
        for idx in &batches {
            let x = batch_input(features, idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let out = forward_train(spec, params, &x)?;
            let ce = loss_supervised(&out.logits, &y, mode)?;
            if !ce.value.is_finite() {
                return Err(diverged(client, 0, "teacher loss", ce.value));
            }
            total += ce.value;
            let g = backward(spec, params, &out.cache, &ce.grad, None)?;
            opt.step(params, &g).map_err(|e| FlError::Divergence {
                client,
                round: 0,
                message: e.to_string(),
            })?;
        }
        losses.push(total / batches.len() as f64);
    }
    Ok(losses)
}

struct BatchLoss {
    value: f64,
    logits_grad: Tensor,
    embedding_grad: Option<Tensor>,
}

#[allow(clippy::too_many_arguments)]
fn composite_loss(
    logits: &Tensor,
    embedding: &Tensor,
    labels: &[usize],
    teacher_logits: Option<&Tensor>,
    global: &PrototypeSet,
    w: LossWeights,
    zeta: f64,
    mode: LabelMode,
) -> Result<BatchLoss, FlError> {
    let n = labels.len();
    let mut value = 0.0;
    let mut grad = Tensor::zeros(logits.shape().to_vec());
    if w.psi > 0.0 {
        let ce = loss_supervised(logits, labels, mode)?;
        value += w.psi * ce.value;
        for (g, c) in grad.data_mut().iter_mut().zip(ce.grad.data()) {
            *g += w.psi * c;
        }
    }
    if w.psi < 1.0 {
        if let Some(t) = teacher_logits {
            let kd = loss_kd(t, logits, zeta, true, n)?;
            let c = 1.0 - w.psi;
            value += c * kd.value;
            for (g, k) in grad.data_mut().iter_mut().zip(kd.grad.data()) {
                *g += c * k;
            }
        }
    }
    let mut embedding_grad = None;
    if w.gamma > 0.0 && !global.is_empty() {
        let (r, mut eg) = batch_regularization(embedding, labels, global);
        value += w.gamma * r;
        eg.data_mut().iter_mut().for_each(|v| *v *= w.gamma);
        embedding_grad = Some(eg);
    }
    Ok(BatchLoss {
        value,
        logits_grad: grad,
        embedding_grad,
    })
}

/// Composite objective over the whole shard with the current student.
pub fn shard_loss(
    client: &ClientState,
    spec: &NetworkSpec,
    global: &PrototypeSet,
    cfg: &RoundConfig,
    anchor: Option<&ModelParams>,
) -> Result<f64, FlError> {
    let w = cfg.loss_weights();
    let (logits, emb) = infer_all(spec, &client.student, &client.features)?;
    let mut value = composite_loss(
        &logits,
        &emb,
        &client.labels,
        client.teacher_logits.as_ref(),
        &PrototypeSet::empty(emb.row_len()),
        w,
        cfg.zeta,
        client.label_mode,
    )?
    .value;
    if w.gamma > 0.0 {
        let local = prototypes_from_embeddings(&emb, &client.labels, true);
        value += w.gamma * regularization_term(&local, global);
    }
    if let (Some(a), true) = (anchor, w.mu > 0.0) {
        value += 0.5 * w.mu * client.student.squared_distance(a);
    }
    Ok(value)
}

/// Local training for one round: `local_epochs` passes of SGD on the composite
/// loss, then class prototypes and, when the server wants it, the model.
pub fn client_update(
    client: &mut ClientState,
    spec: &NetworkSpec,
    global: &PrototypeSet,
    cfg: &RoundConfig,
    round: usize,
) -> Result<ClientUpdate, FlError> {
    let w = cfg.loss_weights();
    let id = client.id;
    client.optimizer.set_round(round as u32);
    let anchor = (w.mu > 0.0).then(|| client.student.clone());
    let mut rng = stream(cfg.seed, id as u64, round as u64, Purpose::StudentBatches);
    let mut epoch_losses = Vec::with_capacity(cfg.local_epochs);
    for _ in 0..cfg.local_epochs {
        let batches = epoch_batches(client.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let x = batch_input(&client.features, idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| client.labels[i]).collect();
            let t = client.teacher_logits.as_ref().map(|t| t.gather_rows(idx));
            let out = forward_train(spec, &mut client.student, &x)?;
            let loss = composite_loss(
                &out.logits,
                &out.embedding,
                &y,
                t.as_ref(),
                global,
                w,
                cfg.zeta,
                client.label_mode,
            )?;
            let mut value = loss.value;
            let mut g = backward(spec, &client.student, &out.cache, &loss.logits_grad, loss.embedding_grad.as_ref())?;
            if let Some(a) = &anchor {
                value += 0.5 * w.mu * client.student.squared_distance(a);
                for ((gv, p), q) in g.values.iter_mut().zip(client.student.values()).zip(a.values()) {
                    *gv += w.mu * (p - q);
                }
            }
            if !value.is_finite() {
                return Err(diverged(id, round, "local loss", value));
            }
            total += value;
            client.optimizer.step(&mut client.student, &g).map_err(|e| FlError::Divergence {
                client: id,
                round,
                message: e.to_string(),
            })?;
        }
        let epoch_value = if cfg.epoch_end_eval {
            shard_loss(client, spec, global, cfg, anchor.as_ref())?
        } else {
            total / batches.len().max(1) as f64
        };
        epoch_losses.push(epoch_value);
    }
    let prototypes = if cfg.strategy.aggregates_prototypes() {
        let (_, emb) = infer_all(spec, &client.student, &client.features)?;
        let p = prototypes_from_embeddings(&emb, &client.labels, client.alpha);
        if !p.all_finite() {
            return Err(diverged(id, round, "a prototype", f64::NAN));
        }
        client.prototypes = p.clone();
        Some(p)
    } else {
        None
    };
    let model = cfg.aggregates_models_at(round).then(|| client.student.clone());
    Ok(ClientUpdate {
        client: id,
        prototypes,
        model,
        epoch_losses,
    })
}
