use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::encode::{EncodedDataset, NormalizationStats};
use super::DataError;
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"EFPKDDAT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    rows: usize,
    features: usize,
    feature_names: Vec<String>,
    stats: NormalizationStats,
    unseen_categories: usize,
}

fn io_err(e: std::io::Error) -> DataError {
    DataError::Format(e.to_string())
}

/// Magic, version, length-prefixed JSON manifest, then little-endian
/// `f64` features row by row and `u64` labels.
pub fn write_dataset<W: Write>(ds: &EncodedDataset, mut w: W) -> Result<(), DataError> {
    let manifest = Manifest {
        rows: ds.len(),
        features: ds.n_features(),
        feature_names: ds.feature_names.clone(),
        stats: ds.stats.clone(),
        unseen_categories: ds.unseen_categories,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| DataError::Format(e.to_string()))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&json).map_err(io_err)?;
    for v in ds.features.data() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for &y in &ds.labels {
        w.write_all(&(y as u64).to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DataError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<EncodedDataset, DataError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(DataError::Format("not a dataset cache".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(io_err)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(DataError::Format(format!("unsupported cache version {version}")));
    }
    let len = read_u64(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io_err)?;
    let m: Manifest = serde_json::from_slice(&json).map_err(|e| DataError::Format(e.to_string()))?;
    let mut data = Vec::with_capacity(m.rows * m.features);
    for _ in 0..m.rows * m.features {
        data.push(f64::from_bits(read_u64(&mut r)?));
    }
    let mut labels = Vec::with_capacity(m.rows);
    for _ in 0..m.rows {
        let y = read_u64(&mut r)? as usize;
        if y >= m.stats.class_names.len() {
            return Err(DataError::Format(format!("label {y} out of range")));
        }
        labels.push(y);
    }
    Ok(EncodedDataset {
        features: Tensor::new(vec![m.rows, m.features], data)?,
        labels,
        label_mode: m.stats.label_mode,
        class_names: m.stats.class_names.clone(),
        normal_class: m.stats.normal_class,
        feature_names: m.feature_names,
        stats: m.stats,
        unseen_categories: m.unseen_categories,
    })
}
