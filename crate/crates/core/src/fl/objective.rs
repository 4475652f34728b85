use super::client::ClientState;
use super::prototypes::{infer_all, prototypes_from_embeddings, squared_distance, PrototypeSet};
use super::FlError;
use crate::nn::{loss_supervised, NetworkSpec};

/// Per-client ingredients of the global objective.
#[derive(Debug, Clone)]
pub struct ObjectiveTerm {
    pub alpha: bool,
    pub size: usize,
    pub supervised_loss: f64,
    pub prototypes: PrototypeSet,
}

/// `sum_s (a_s|D_s|/U) L_s + gamma * sum_k sum_s (a_s|D_sk|/U_k) d(global_k, local_sk)`,
/// an evaluation-only scalar.
pub fn global_objective_value(terms: &[ObjectiveTerm], global: &PrototypeSet, gamma: f64) -> f64 {
    let u: usize = terms.iter().filter(|t| t.alpha).map(|t| t.size).sum();
    if u == 0 {
        return 0.0;
    }
    let mut value: f64 = terms
        .iter()
        .filter(|t| t.alpha)
        .map(|t| t.size as f64 / u as f64 * t.supervised_loss)
        .sum();
    if gamma == 0.0 {
        return value;
    }
    for (k, g) in &global.entries {
        let holders: Vec<(&ObjectiveTerm, usize)> = terms
            .iter()
            .filter(|t| t.alpha)
            .filter_map(|t| t.prototypes.get(*k).map(|p| (t, p.count)))
            .collect();
        let uk: usize = holders.iter().map(|(_, c)| c).sum();
        if uk == 0 {
            continue;
        }
        for (t, c) in holders {
            let local = &t.prototypes.get(*k).expect("filtered on presence").vector;
            value += gamma * c as f64 / uk as f64 * squared_distance(&g.vector, local);
        }
    }
    value
}

/// Evaluates each client's student on its own shard to build the objective terms.
pub fn objective_terms(clients: &[ClientState], spec: &NetworkSpec) -> Result<Vec<ObjectiveTerm>, FlError> {
    clients
        .iter()
        .map(|c| {
            let (logits, emb) = infer_all(spec, &c.student, &c.features)?;
            Ok(ObjectiveTerm {
                alpha: c.alpha,
                size: c.len(),
                supervised_loss: loss_supervised(&logits, &c.labels, c.label_mode)?.value,
                prototypes: prototypes_from_embeddings(&emb, &c.labels, c.alpha),
            })
        })
        .collect()
}
