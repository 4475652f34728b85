use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::DataError;

pub const MAX_PARTITION_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// Sorted training-row indices per client.
    pub client_shards: Vec<Vec<usize>>,
    pub delta: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.client_shards.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.client_shards.iter().map(Vec::len).collect()
    }
}

fn proportions(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, n_clients: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every draw underflowed: all mass on one client
        let mut p = vec![0.0; n_clients];
        p[rng.random_range(0..n_clients)] = 1.0;
        p
    }
}

fn attempt(rng: &mut ChaCha8Rng, by_class: &BTreeMap<usize, Vec<usize>>, n_clients: usize, gamma: &Gamma<f64>) -> Vec<Vec<usize>> {
    let mut shards = vec![Vec::new(); n_clients];
    for idx in by_class.values() {
        let mut idx = idx.clone();
        idx.shuffle(rng);
        let p = proportions(rng, gamma, n_clients);
        let n = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (c, pc) in p.iter().enumerate() {
            cum += pc;
            let end = if c + 1 == n_clients {
                n
            } else {
                ((cum * n as f64).floor() as usize).clamp(start, n)
            };
            shards[c].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    shards
}

/// Splits row indices across clients with per-class Dirichlet(δ) proportions.
/// Draws that leave a client empty are redrawn up to [`MAX_PARTITION_RETRIES`] times.
pub fn dirichlet_partition(labels: &[usize], n_clients: usize, delta: f64, seed: u64) -> Result<PartitionPlan, DataError> {
    if n_clients == 0 {
        return Err(DataError::Invalid("n_clients must be at least 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(DataError::Invalid(format!("delta must be positive, got {delta}")));
    }
    if labels.len() < n_clients {
        return Err(DataError::Partition {
            retries: 0,
            message: format!("{} rows cannot fill {n_clients} clients", labels.len()),
        });
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let gamma = Gamma::new(delta, 1.0).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_PARTITION_RETRIES {
        let shards = attempt(&mut rng, &by_class, n_clients, &gamma);
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(PartitionPlan {
                client_shards: shards,
                delta,
                seed,
            });
        }
    }
    Err(DataError::Partition {
        retries: MAX_PARTITION_RETRIES,
        message: format!("some of {n_clients} clients stayed empty; use a larger delta or fewer clients"),
    })
}
