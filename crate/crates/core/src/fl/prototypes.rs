use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FlError;
use crate::nn::{forward, Mode, ModelParams, NetworkSpec, Tensor};

/// Rows per inference chunk when embedding a whole shard.
const INFER_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub vector: Vec<f64>,
    /// Samples of the class behind the vector.
    pub count: usize,
}

/// Per-class mean embeddings; classes a holder never saw are simply absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub dim: usize,
    pub entries: BTreeMap<usize, Prototype>,
}

impl PrototypeSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, class: usize) -> Option<&Prototype> {
        self.entries.get(&class)
    }

    pub fn insert(&mut self, class: usize, vector: Vec<f64>, count: usize) {
        self.entries.insert(class, Prototype { vector, count });
    }

    /// Size on the wire: class id, count and vector per entry.
    pub fn wire_bytes(&self) -> u64 {
        (self.entries.len() * (16 + 8 * self.dim)) as u64
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.vector.iter().all(|v| v.is_finite()))
    }
}

/// Infer-mode forward over all rows of `[N, d]` features in bounded chunks.
pub fn infer_all(spec: &NetworkSpec, params: &ModelParams, features: &Tensor) -> Result<(Tensor, Tensor), FlError> {
    let n = features.rows();
    let d = features.row_len();
    let mut logits = Vec::with_capacity(n * spec.n_classes());
    let mut emb = Vec::with_capacity(n * spec.embedding_dim());
    let mut start = 0;
    while start < n {
        let end = (start + INFER_CHUNK).min(n);
        let chunk = Tensor::new(vec![end - start, 1, d], features.data()[start * d..end * d].to_vec())?;
        let out = forward(spec, params, &chunk, Mode::Infer)?;
        logits.extend_from_slice(out.logits.data());
        emb.extend_from_slice(out.embedding.data());
        start = end;
    }
    Ok((
        Tensor::new(vec![n, spec.n_classes()], logits)?,
        Tensor::new(vec![n, spec.embedding_dim()], emb)?,
    ))
}

/// Class means of precomputed `[N, E]` embeddings, scaled by the availability flag.
pub fn prototypes_from_embeddings(embedding: &Tensor, labels: &[usize], alpha: bool) -> PrototypeSet {
    let dim = embedding.row_len();
    let mut set = PrototypeSet::empty(dim);
    if !alpha {
        return set;
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        let e = sums.entry(y).or_insert_with(|| (vec![0.0; dim], 0));
        for (s, v) in e.0.iter_mut().zip(embedding.row(i)) {
            *s += v;
        }
        e.1 += 1;
    }
    for (k, (mut sum, count)) in sums {
        let inv = 1.0 / count as f64;
        sum.iter_mut().for_each(|v| *v *= inv);
        set.insert(k, sum, count);
    }
    set
}

/// Infer-mode class-mean embeddings of a shard; `alpha = false` gives an empty set.
pub fn compute_prototypes(
    spec: &NetworkSpec,
    params: &ModelParams,
    features: &Tensor,
    labels: &[usize],
    alpha: bool,
) -> Result<PrototypeSet, FlError> {
    if !alpha {
        return Ok(PrototypeSet::empty(spec.embedding_dim()));
    }
    let (_, emb) = infer_all(spec, params, features)?;
    Ok(prototypes_from_embeddings(&emb, labels, alpha))
}

/// Sum of squared distances over classes held by both sets.
pub fn regularization_term(local: &PrototypeSet, global: &PrototypeSet) -> f64 {
    local
        .entries
        .iter()
        .filter_map(|(k, p)| global.get(*k).map(|g| squared_distance(&p.vector, &g.vector)))
        .sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Value and per-sample embedding gradient of the regularizer for one batch,
/// where local prototypes are the batch class means.
pub fn batch_regularization(embedding: &Tensor, labels: &[usize], global: &PrototypeSet) -> (f64, Tensor) {
    let (n, dim) = (embedding.rows(), embedding.row_len());
    let mut grad = Tensor::zeros(vec![n, dim]);
    if global.is_empty() {
        return (0.0, grad);
    }
    let local = prototypes_from_embeddings(embedding, labels, true);
    let mut value = 0.0;
    let mut per_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (k, p) in &local.entries {
        let Some(g) = global.get(*k) else { continue };
        value += squared_distance(&p.vector, &g.vector);
        let scale = 2.0 / p.count as f64;
        per_class.insert(*k, p.vector.iter().zip(&g.vector).map(|(a, b)| scale * (a - b)).collect());
    }
    let data = grad.data_mut();
    for (i, y) in labels.iter().enumerate() {
        if let Some(g) = per_class.get(y) {
            data[i * dim..(i + 1) * dim].copy_from_slice(g);
        }
    }
    (value, grad)
}

/// Count-weighted per-class average over available contributors, scaled by
/// `1/|M_k|` unless `normalized` is set.
pub fn aggregate_prototypes(sets: &[PrototypeSet], alphas: &[bool], normalized: bool) -> Result<PrototypeSet, FlError> {
    if sets.len() != alphas.len() {
        return Err(FlError::Aggregation("one availability flag per prototype set required".into()));
    }
    let dim = sets.iter().map(|s| s.dim).max().unwrap_or(0);
    if sets.iter().any(|s| !s.is_empty() && s.dim != dim) {
        return Err(FlError::Aggregation("prototype dimensions differ".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<&Prototype>> = BTreeMap::new();
    for (set, _) in sets.iter().zip(alphas).filter(|(_, &a)| a) {
        for (k, p) in &set.entries {
            by_class.entry(*k).or_default().push(p);
        }
    }
    let mut out = PrototypeSet::empty(dim);
    for (k, mut contribs) in by_class {
        // canonical order keeps the floating-point sum independent of client order
        contribs.sort_by(|a, b| {
            a.count.cmp(&b.count).then_with(|| {
                a.vector
                    .iter()
                    .zip(&b.vector)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let total: usize = contribs.iter().map(|p| p.count).sum();
        let m = contribs.len() as f64;
        let mut v = vec![0.0; dim];
        for p in &contribs {
            let w = p.count as f64 / total as f64;
            for (acc, x) in v.iter_mut().zip(&p.vector) {
                *acc += w * x;
            }
        }
        if !normalized {
            v.iter_mut().for_each(|x| *x /= m);
        }
        out.insert(k, v, total);
    }
    Ok(out)
}
