//! Traffic-table ingestion, encoding, PCC feature selection and
//! Dirichlet client partitioning.

mod cache;
mod encode;
mod partition;
mod profile;
mod select;
mod synthetic;
mod table;

pub use cache::{read_dataset, write_dataset};
pub use encode::{encode_and_normalize, encode_features, EncodedDataset, NormalizationStats, ANOMALY_CLASS};
pub use partition::{dirichlet_partition, PartitionPlan, MAX_PARTITION_RETRIES};
pub use profile::DatasetProfile;
pub use select::{pcc, pcc_matrix, select_features, FeatureSelection, PCC_BAND};
pub use synthetic::{generate, SyntheticConfig};
pub use table::{ingest, ingest_optional_label, ingest_reader, ColumnKind, RawTable};

use crate::nn::{LabelMode, NnError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("ingestion error at row {row}: {message}")]
    Ingest { row: usize, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown label `{label}` at row {row}")]
    UnknownLabel { row: usize, label: String },
    #[error("invalid dataset profile: {0}")]
    Profile(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("partition failed after {retries} attempts: {message}")]
    Partition { retries: usize, message: String },
    #[error("dataset cache: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Train/test pair after encoding and feature selection.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: EncodedDataset,
    pub test: EncodedDataset,
    pub selection: FeatureSelection,
}

/// Encodes both splits with training statistics, selects `top_k` features on
/// the training split and applies the same columns to the test split.
pub fn prepare(
    train: &RawTable,
    test: &RawTable,
    profile: &DatasetProfile,
    mode: LabelMode,
    top_k: usize,
) -> Result<PreparedData, DataError> {
    let train_enc = encode_and_normalize(train, profile, mode, None)?;
    let test_enc = encode_and_normalize(test, profile, mode, Some(&train_enc.stats))?;
    let top_k = top_k.min(train_enc.n_features());
    let selection = select_features(&train_enc.features, top_k)?;
    Ok(PreparedData {
        train: train_enc.select_columns(&selection.selected_indices)?,
        test: test_enc.select_columns(&selection.selected_indices)?,
        selection,
    })
}
