use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::spec::{Layer, NetworkSpec};
use super::NnError;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Location of one layer's tensors inside the flat parameter vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: usize,
    pub weight: Range<usize>,
    pub weight_shape: Vec<usize>,
    pub bias: Range<usize>,
    /// Running mean/variance ranges in the buffer vector (batch norm only).
    pub running: Option<(Range<usize>, Range<usize>)>,
}

/// Trainable values plus batch-norm running statistics for one network.
///
/// Conv weights are laid out `[out, kernel, in]`, dense weights `[out, in]`,
/// batch-norm scale/shift as weight/bias.
#[derive(Debug, Clone)]
pub struct ModelParams {
    values: Vec<f64>,
    buffers: Vec<f64>,
    blocks: Vec<ParamBlock>,
    stamp: u64,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.buffers == other.buffers && self.blocks == other.blocks
    }
}

/// Gradient with the same layout as [`ModelParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            values: vec![0.0; params.total_count()],
        }
    }
}

impl ModelParams {
    /// All-zero parameters (batch-norm scale 1, running variance 1).
    pub fn zeros(spec: &NetworkSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let mut blocks = Vec::new();
        let mut n_values = 0;
        let mut n_buffers = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            let (wshape, bias_len, bn) = match *layer {
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                } => (vec![out_channels, kernel_size, in_channels], out_channels, false),
                Layer::Dense {
                    in_units,
                    out_units,
                } => (vec![out_units, in_units], out_units, false),
                Layer::BatchNorm1d { channels } => (vec![channels], channels, true),
                Layer::Relu | Layer::Flatten => continue,
            };
            let wlen: usize = wshape.iter().product();
            let weight = n_values..n_values + wlen;
            let bias = weight.end..weight.end + bias_len;
            n_values = bias.end;
            let running = bn.then(|| {
                let mean = n_buffers..n_buffers + bias_len;
                let var = mean.end..mean.end + bias_len;
                n_buffers = var.end;
                (mean, var)
            });
            blocks.push(ParamBlock {
                layer: i,
                weight,
                weight_shape: wshape,
                bias,
                running,
            });
        }
        let mut params = Self {
            values: vec![0.0; n_values],
            buffers: vec![0.0; n_buffers],
            blocks,
            stamp: fresh_stamp(),
        };
        for b in params.blocks.clone() {
            if let Some((_, var)) = &b.running {
                params.values[b.weight.clone()].fill(1.0);
                params.buffers[var.clone()].fill(1.0);
            }
        }
        Ok(params)
    }

    /// Uniform fan-in initialization: weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; batch norm starts at identity.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self, NnError> {
        let mut params = Self::zeros(spec)?;
        for b in params.blocks.clone() {
            if b.running.is_some() {
                continue;
            }
            let fan_in: usize = b.weight_shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params.values[b.weight.clone()] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut params.values[b.bias.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn total_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the trainable values; invalidates outstanding caches.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.values
    }

    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut [f64] {
        &mut self.buffers
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    /// Parameter block owned by `layer`, if that layer has parameters.
    pub fn block(&self, layer: usize) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.layer == layer)
    }

    pub fn weight(&self, layer: usize) -> Option<&[f64]> {
        self.block(layer).map(|b| &self.values[b.weight.clone()])
    }

    pub fn bias(&self, layer: usize) -> Option<&[f64]> {
        self.block(layer).map(|b| &self.values[b.bias.clone()])
    }

    pub(crate) fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().chain(&self.buffers).all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.blocks == other.blocks
            && self.values.len() == other.values.len()
            && self.buffers.len() == other.buffers.len()
    }

    /// Replaces all values and buffers; layouts must match.
    pub fn assign(&mut self, values: Vec<f64>, buffers: Vec<f64>) -> Result<(), NnError> {
        if values.len() != self.values.len() || buffers.len() != self.buffers.len() {
            return Err(NnError::Dimension(format!(
                "assign expects {}+{} values, got {}+{}",
                self.values.len(),
                self.buffers.len(),
                values.len(),
                buffers.len()
            )));
        }
        self.values = values;
        self.buffers = buffers;
        self.stamp = fresh_stamp();
        Ok(())
    }

    /// Squared L2 distance between the trainable values of two models.
    pub fn squared_distance(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}
