//! Rule-based blocking of detected anomalies and the application stage that
//! replays the stored preprocessing over new traffic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    encode_and_normalize, encode_features, ingest_optional_label, DataError, DatasetProfile, FeatureSelection,
    NormalizationStats, RawTable,
};
use crate::fl::{predict, FlError};
use crate::metrics::{
    binary_metrics, confusion, multiclass_accuracy, odc, BinaryCounts, BinaryMetrics, ConfusionMatrix, MetricsError,
};
use crate::nn::{read_params, write_params, ModelParams, NetworkSpec, NnError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum InterventionError {
    #[error("application stage: {0}")]
    Stage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Malicious,
    Benign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Blocked,
    Passed,
}

impl Verdict {
    /// Every class other than the benign one is pooled into `Malicious`.
    pub fn from_class(predicted: usize, normal_class: usize) -> Self {
        if predicted == normal_class {
            Verdict::Benign
        } else {
            Verdict::Malicious
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Malicious => "malicious",
            Verdict::Benign => "benign",
        }
    }
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Blocked => "blocked",
            Action::Passed => "passed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub record_index: usize,
    pub predicted_class: usize,
    pub verdict: Verdict,
    /// Position of the record in the incoming stream.
    pub slot: u64,
}

impl DetectionEvent {
    pub fn new(record_index: usize, predicted_class: usize, normal_class: usize) -> Self {
        Self {
            record_index,
            predicted_class,
            verdict: Verdict::from_class(predicted_class, normal_class),
            slot: record_index as u64,
        }
    }
}

pub fn apply_rule(event: &DetectionEvent) -> Action {
    match event.verdict {
        Verdict::Malicious => Action::Blocked,
        Verdict::Benign => Action::Passed,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub event: DetectionEvent,
    pub action: Action,
}

/// One entry per evaluated record, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockLog {
    pub entries: Vec<BlockEntry>,
    pub blocked: usize,
    pub passed: usize,
}

impl BlockLog {
    pub fn from_events(events: impl IntoIterator<Item = DetectionEvent>) -> Self {
        let mut log = BlockLog::default();
        for event in events {
            let action = apply_rule(&event);
            match action {
                Action::Blocked => log.blocked += 1,
                Action::Passed => log.passed += 1,
            }
            log.entries.push(BlockEntry { event, action });
        }
        log
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with `record_index,predicted_class,verdict,action`; classes are
    /// written by name.
    pub fn write_csv<W: Write>(&self, w: W, class_names: &[String]) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["record_index", "predicted_class", "verdict", "action"])?;
        for e in &self.entries {
            let class = class_names
                .get(e.event.predicted_class)
                .cloned()
                .unwrap_or_else(|| e.event.predicted_class.to_string());
            out.write_record([
                e.event.record_index.to_string(),
                class,
                e.event.verdict.as_str().to_string(),
                e.action.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Metrics over a labelled stream; anomaly classes are pooled for the binary counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBundle {
    pub n_records: usize,
    pub confusion: ConfusionMatrix,
    pub binary: BinaryCounts,
    pub binary_metrics: BinaryMetrics,
    /// Exact-class accuracy; equals the binary accuracy in binary mode.
    pub accuracy: f64,
    pub odc: u64,
}

impl EvaluationBundle {
    pub fn compute(pred: &[usize], truth: &[usize], n_classes: usize, normal_class: usize) -> Result<Self, MetricsError> {
        let cm = confusion(pred, truth, n_classes, normal_class)?;
        let binary = cm.binary();
        Ok(Self {
            n_records: pred.len(),
            binary_metrics: binary_metrics(&binary),
            binary,
            confusion: cm,
            accuracy: if pred.is_empty() { 0.0 } else { multiclass_accuracy(pred, truth)? },
            odc: odc(pred, truth, normal_class)?,
        })
    }
}

/// Final model plus the preprocessing needed to replay it on new data.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub spec: NetworkSpec,
    pub params: ModelParams,
    pub selection: FeatureSelection,
    pub stats: NormalizationStats,
    pub profile: DatasetProfile,
}

const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    version: u32,
    spec: NetworkSpec,
    selection: FeatureSelection,
    stats: NormalizationStats,
    profile: DatasetProfile,
}

/// `model.json` next to `model.bin`.
pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> InterventionError {
    InterventionError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl ModelArtifact {
    pub fn class_names(&self) -> &[String] {
        &self.stats.class_names
    }

    /// Writes parameters to `model_path` and the preprocessing sidecar beside it.
    pub fn save(&self, model_path: &Path) -> Result<(), InterventionError> {
        let f = File::create(model_path).map_err(|e| file_err(model_path, e))?;
        write_params(&self.params, BufWriter::new(f))?;
        let side = sidecar_path(model_path);
        let body = Sidecar {
            version: SIDECAR_VERSION,
            spec: self.spec.clone(),
            selection: self.selection.clone(),
            stats: self.stats.clone(),
            profile: self.profile.clone(),
        };
        let json = serde_json::to_string_pretty(&body).map_err(|e| file_err(&side, e))?;
        std::fs::write(&side, json).map_err(|e| file_err(&side, e))
    }

    pub fn load(model_path: &Path) -> Result<Self, InterventionError> {
        let side = sidecar_path(model_path);
        let text = std::fs::read_to_string(&side).map_err(|e| file_err(&side, e))?;
        let body: Sidecar = serde_json::from_str(&text).map_err(|e| file_err(&side, e))?;
        if body.version != SIDECAR_VERSION {
            return Err(file_err(&side, format!("unsupported sidecar version {}", body.version)));
        }
        let f = File::open(model_path).map_err(|e| file_err(model_path, e))?;
        let params = read_params(&body.spec, BufReader::new(f))?;
        Ok(Self {
            spec: body.spec,
            params,
            selection: body.selection,
            stats: body.stats,
            profile: body.profile,
        })
    }

    fn check_selection(&self) -> Result<(), InterventionError> {
        let d = self.stats.feature_names.len();
        if let Some(&bad) = self.selection.selected_indices.iter().find(|&&i| i >= d) {
            return Err(InterventionError::Stage(format!(
                "stored selection refers to feature {bad} but the statistics hold {d}"
            )));
        }
        if self.selection.selected_indices.len() != self.spec.input_len {
            return Err(InterventionError::Stage(format!(
                "stored selection keeps {} features, the model expects {}",
                self.selection.selected_indices.len(),
                self.spec.input_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ApplicationOutcome {
    pub log: BlockLog,
    /// `None` when the input carries no ground truth.
    pub evaluation: Option<EvaluationBundle>,
}

fn select(features: &Tensor, indices: &[usize]) -> Result<Tensor, InterventionError> {
    let n = features.shape()[0];
    let mut data = Vec::with_capacity(n * indices.len());
    for r in 0..n {
        let row = features.row(r);
        data.extend(indices.iter().map(|&i| row[i]));
    }
    Ok(Tensor::new(vec![n, indices.len()], data)?)
}

/// Encodes `table` with the stored statistics and selection, classifies every
/// record and applies the blocking rule. Labels, when present, yield metrics.
pub fn detect(artifact: &ModelArtifact, table: &RawTable) -> Result<ApplicationOutcome, InterventionError> {
    artifact.check_selection()?;
    let idx = &artifact.selection.selected_indices;
    let (features, truth) = if table.label_column.is_some() {
        let ds = encode_and_normalize(table, &artifact.profile, artifact.stats.label_mode, Some(&artifact.stats))?;
        (select(&ds.features, idx)?, Some(ds.labels))
    } else {
        let (features, _) = encode_features(table, &artifact.stats)?;
        (select(&features, idx)?, None)
    };
    let pred = predict(&artifact.spec, &artifact.params, &features)?;
    let normal = artifact.stats.normal_class;
    let log = BlockLog::from_events(pred.iter().enumerate().map(|(i, &p)| DetectionEvent::new(i, p, normal)));
    let evaluation = match truth {
        Some(t) => Some(EvaluationBundle::compute(&pred, &t, artifact.stats.class_names.len(), normal)?),
        None => None,
    };
    Ok(ApplicationOutcome { log, evaluation })
}

/// Reads a CSV (label column optional) and runs [`detect`] on it.
pub fn run_application_stage(artifact: &ModelArtifact, new_data: &Path) -> Result<ApplicationOutcome, InterventionError> {
    let table = ingest_optional_label(new_data, &artifact.profile)?;
    detect(artifact, &table)
}
