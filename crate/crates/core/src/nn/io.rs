//! Parameter snapshot file: an 8-byte magic, a shape manifest, then every
//! value as little-endian `f64`.
//!
//! ```text
//! b"EFPKDPRM"
//! u32 block_count
//! per block: u32 ndim, ndim x u64 dims
//! f64 values, blocks in manifest order
//! ```
//! Blocks are emitted per parameterized layer: weight, bias, and for batch
//! norm the running mean and running variance.

use std::io::{Read, Write};

use super::params::ModelParams;
use super::spec::NetworkSpec;
use super::NnError;

const MAGIC: &[u8; 8] = b"EFPKDPRM";

fn manifest(params: &ModelParams) -> Vec<(Vec<usize>, &[f64])> {
    let mut out = Vec::new();
    for b in params.blocks() {
        out.push((b.weight_shape.clone(), &params.values()[b.weight.clone()]));
        out.push((vec![b.bias.len()], &params.values()[b.bias.clone()]));
        if let Some((m, v)) = &b.running {
            out.push((vec![m.len()], &params.buffers()[m.clone()]));
            out.push((vec![v.len()], &params.buffers()[v.clone()]));
        }
    }
    out
}

pub fn write_params<W: Write>(params: &ModelParams, mut w: W) -> Result<(), NnError> {
    let blocks = manifest(params);
    w.write_all(MAGIC)?;
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for (shape, _) in &blocks {
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for (_, values) in &blocks {
        for v in *values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a snapshot and checks its manifest against `spec`.
pub fn read_params<R: Read>(spec: &NetworkSpec, mut r: R) -> Result<ModelParams, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let mut params = ModelParams::zeros(spec)?;
    let expected: Vec<Vec<usize>> = manifest(&params).into_iter().map(|(s, _)| s).collect();
    let count = read_u32(&mut r)? as usize;
    if count != expected.len() {
        return Err(NnError::Format(format!(
            "{count} blocks in file, network needs {}",
            expected.len()
        )));
    }
    for (i, want) in expected.iter().enumerate() {
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        if &shape != want {
            return Err(NnError::Format(format!("block {i}: shape {shape:?}, expected {want:?}")));
        }
    }
    let mut read_vec = |n: usize| -> Result<Vec<f64>, NnError> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let mut values = params.values().to_vec();
    let mut buffers = params.buffers().to_vec();
    for b in params.blocks().to_vec() {
        values[b.weight.clone()].copy_from_slice(&read_vec(b.weight.len())?);
        values[b.bias.clone()].copy_from_slice(&read_vec(b.bias.len())?);
        if let Some((m, v)) = &b.running {
            buffers[m.clone()].copy_from_slice(&read_vec(m.len())?);
            buffers[v.clone()].copy_from_slice(&read_vec(v.len())?);
        }
    }
    params.assign(values, buffers)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn snapshot_round_trips(seed in 0u64..1000, d in 2usize..6, bn in any::<bool>()) {
            let spec = NetworkSpec::conv_stack(d, &[1, 3], &[4], 2, bn, crate::nn::Role::Teacher).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let params = ModelParams::init(&spec, &mut rng).unwrap();
            let mut buf = Vec::new();
            write_params(&params, &mut buf).unwrap();
            let back = read_params(&spec, buf.as_slice()).unwrap();
            prop_assert_eq!(back, params);
        }
    }

    #[test]
    fn mismatched_spec_is_rejected() {
        let a = NetworkSpec::student(4, &[1, 2], &[3], 2).unwrap();
        let b = NetworkSpec::student(5, &[1, 2], &[3], 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut buf = Vec::new();
        write_params(&ModelParams::init(&a, &mut rng).unwrap(), &mut buf).unwrap();
        assert!(matches!(read_params(&b, buf.as_slice()), Err(NnError::Format(_))));
    }
}
