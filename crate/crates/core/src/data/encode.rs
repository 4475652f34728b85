use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::profile::DatasetProfile;
use super::table::{ColumnKind, RawTable};
use super::DataError;
use crate::nn::{LabelMode, Tensor};

/// Index of the anomaly class in binary mode; it is also the positive class.
pub const ANOMALY_CLASS: usize = 0;

/// Everything needed to encode unseen rows exactly like the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub feature_names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Sorted vocabulary per categorical column; code `i + 1`, unseen values get 0.
    pub vocabularies: Vec<Option<Vec<String>>>,
    pub label_mode: LabelMode,
    pub class_names: Vec<String>,
    pub normal_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    /// `[N, d]`
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub label_mode: LabelMode,
    pub class_names: Vec<String>,
    pub normal_class: usize,
    pub feature_names: Vec<String>,
    pub stats: NormalizationStats,
    /// Categorical cells mapped to the reserved unseen index.
    pub unseen_categories: usize,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.row_len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Keeps the listed feature columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self, DataError> {
        let d = self.n_features();
        if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
            return Err(DataError::Invalid(format!("feature index {bad} out of range for {d} features")));
        }
        let n = self.len();
        let mut data = Vec::with_capacity(n * indices.len());
        for r in 0..n {
            let row = self.features.row(r);
            data.extend(indices.iter().map(|&i| row[i]));
        }
        let mut out = self.clone();
        out.features = Tensor::new(vec![n, indices.len()], data)?;
        out.feature_names = indices.iter().map(|&i| self.feature_names[i].clone()).collect();
        Ok(out)
    }

    /// Rows `indices` as a new dataset sharing the encoding.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = self.clone();
        out.features = self.features.gather_rows(indices);
        out.labels = indices.iter().map(|&i| self.labels[i]).collect();
        out
    }

    /// Features shaped `[N, 1, d]` for the network.
    pub fn network_input(&self) -> Tensor {
        let (n, d) = (self.len(), self.n_features());
        self.features
            .clone()
            .reshape(vec![n, 1, d])
            .expect("reshape preserves length")
    }
}

fn class_vocabulary(table: &RawTable, profile: &DatasetProfile, mode: LabelMode) -> Result<(Vec<String>, usize), DataError> {
    match mode {
        LabelMode::Binary => Ok((vec!["anomaly".into(), "normal".into()], 1)),
        LabelMode::Multi => {
            let mut set: BTreeSet<String> = if profile.label_groups.is_empty() {
                BTreeSet::new()
            } else {
                profile.label_groups.iter().map(|(_, c)| c.clone()).collect()
            };
            let label = table
                .label_column
                .ok_or_else(|| DataError::MissingColumn(profile.label_column.clone()))?;
            for (i, r) in table.rows.iter().enumerate() {
                let raw = &r[label];
                let g = profile.group_label(raw).ok_or_else(|| DataError::UnknownLabel {
                    row: i + 1,
                    label: raw.clone(),
                })?;
                set.insert(g);
            }
            let names: Vec<String> = set.into_iter().collect();
            let normal = names
                .iter()
                .position(|c| profile.is_normal(c))
                .ok_or_else(|| DataError::Profile(format!("normal label `{}` never occurs", profile.normal_label)))?;
            Ok((names, normal))
        }
    }
}

fn encode_label(
    raw: &str,
    row: usize,
    profile: &DatasetProfile,
    stats: &NormalizationStats,
) -> Result<usize, DataError> {
    let unknown = || DataError::UnknownLabel {
        row,
        label: raw.to_string(),
    };
    let g = profile.group_label(raw).ok_or_else(unknown)?;
    match stats.label_mode {
        LabelMode::Binary => Ok(if profile.is_normal(&g) { stats.normal_class } else { ANOMALY_CLASS }),
        LabelMode::Multi => stats.class_names.iter().position(|c| *c == g).ok_or_else(unknown),
    }
}

fn fit_stats(table: &RawTable, profile: &DatasetProfile, mode: LabelMode) -> Result<NormalizationStats, DataError> {
    let cols = table.feature_columns();
    let (class_names, normal_class) = class_vocabulary(table, profile, mode)?;
    let mut stats = NormalizationStats {
        feature_names: cols.iter().map(|&c| table.columns[c].clone()).collect(),
        kinds: cols.iter().map(|&c| table.kinds[c]).collect(),
        min: Vec::with_capacity(cols.len()),
        max: Vec::with_capacity(cols.len()),
        vocabularies: Vec::with_capacity(cols.len()),
        label_mode: mode,
        class_names,
        normal_class,
    };
    for &c in &cols {
        match table.kinds[c] {
            ColumnKind::Numeric => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for r in &table.rows {
                    let v: f64 = r[c].trim().parse().expect("numeric kind was inferred from parseable cells");
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if table.rows.is_empty() {
                    (lo, hi) = (0.0, 0.0);
                }
                stats.min.push(lo);
                stats.max.push(hi);
                stats.vocabularies.push(None);
            }
            ColumnKind::Categorical => {
                let vocab: BTreeSet<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
                stats.min.push(0.0);
                stats.max.push(vocab.len() as f64);
                stats.vocabularies.push(Some(vocab.into_iter().map(str::to_string).collect()));
            }
        }
    }
    Ok(stats)
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Encodes and scales the feature columns named in `stats`; returns `[N, d]`
/// features and the number of unseen categorical cells.
pub fn encode_features(table: &RawTable, stats: &NormalizationStats) -> Result<(Tensor, usize), DataError> {
    let cols: Vec<usize> = stats
        .feature_names
        .iter()
        .map(|name| {
            table
                .columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| DataError::MissingColumn(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let d = cols.len();
    let n = table.n_rows();
    let mut data = Vec::with_capacity(n * d);
    let mut unseen = 0;
    for (i, r) in table.rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let cell = r[c].trim();
            let v = match &stats.vocabularies[j] {
                None => cell.parse::<f64>().map_err(|_| DataError::Ingest {
                    row: i + 1,
                    message: format!("column `{}` expects a number, got `{cell}`", stats.feature_names[j]),
                })?,
                Some(vocab) => match vocab.binary_search_by(|x| x.as_str().cmp(cell)) {
                    Ok(k) => (k + 1) as f64,
                    Err(_) => {
                        unseen += 1;
                        0.0
                    }
                },
            };
            data.push(scale(v, stats.min[j], stats.max[j]));
        }
    }
    Ok((Tensor::new(vec![n, d], data)?, unseen))
}

/// Integer-encodes categoricals by sorted vocabulary and min-max scales every
/// feature to `[0, 1]`. With `stats` given (test split) the training encoding
/// is reused, values are clamped and unseen categories map to 0.
pub fn encode_and_normalize(
    table: &RawTable,
    profile: &DatasetProfile,
    mode: LabelMode,
    stats: Option<&NormalizationStats>,
) -> Result<EncodedDataset, DataError> {
    let stats = match stats {
        Some(s) => {
            if s.label_mode != mode {
                return Err(DataError::Invalid("label mode differs from the training statistics".into()));
            }
            s.clone()
        }
        None => fit_stats(table, profile, mode)?,
    };
    let label = table
        .label_column
        .ok_or_else(|| DataError::MissingColumn(profile.label_column.clone()))?;
    let (features, unseen) = encode_features(table, &stats)?;
    let labels = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| encode_label(&r[label], i + 1, profile, &stats))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EncodedDataset {
        features,
        labels,
        label_mode: mode,
        class_names: stats.class_names.clone(),
        normal_class: stats.normal_class,
        feature_names: stats.feature_names.clone(),
        stats,
        unseen_categories: unseen,
    })
}
