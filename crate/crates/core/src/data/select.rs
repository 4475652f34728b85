use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::nn::Tensor;

/// Qualifying band for `|pcc|`, inclusive at both ends.
pub const PCC_BAND: (f64, f64) = (0.1, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    /// Sorted ascending.
    pub selected_indices: Vec<usize>,
    pub qualifying_counts: Vec<usize>,
    pub band: (f64, f64),
    pub top_k: usize,
}

/// Pearson correlation; `None` when either vector has zero variance or the
/// lengths are unusable.
pub fn pcc(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn columns(features: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (features.rows(), features.row_len());
    let data = features.data();
    (0..d).map(|j| (0..n).map(|i| data[i * d + j]).collect()).collect()
}

/// Symmetric `d x d` matrix of pairwise correlations (diagonal included).
pub fn pcc_matrix(features: &Tensor) -> Vec<Vec<Option<f64>>> {
    let cols = columns(features);
    let d = cols.len();
    (0..d)
        .into_par_iter()
        .map(|i| (0..d).map(|j| pcc(&cols[i], &cols[j])).collect())
        .collect()
}

fn in_band(v: Option<f64>) -> bool {
    v.is_some_and(|r| (PCC_BAND.0..=PCC_BAND.1).contains(&r.abs()))
}

/// Counts, for every feature, how many other features it correlates with
/// inside the band and keeps the `top_k` highest counts (lower index on ties).
pub fn select_features(features: &Tensor, top_k: usize) -> Result<FeatureSelection, DataError> {
    if features.shape().len() != 2 {
        return Err(DataError::Invalid(format!("features must be [N, d], got {:?}", features.shape())));
    }
    let d = features.row_len();
    if top_k > d {
        return Err(DataError::Invalid(format!("top_k {top_k} exceeds {d} features")));
    }
    let matrix = pcc_matrix(features);
    let counts: Vec<usize> = (0..d)
        .map(|i| (0..d).filter(|&j| j != i && in_band(matrix[i][j])).count())
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = order.into_iter().take(top_k).collect();
    selected.sort_unstable();
    Ok(FeatureSelection {
        selected_indices: selected,
        qualifying_counts: counts,
        band: PCC_BAND,
        top_k,
    })
}
