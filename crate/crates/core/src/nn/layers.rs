//! Forward and backward passes for the sequential Conv1d/BatchNorm/ReLU/Dense stack.

use super::params::{Gradients, ModelParams};
use super::spec::{Layer, NetworkSpec};
use super::tensor::Tensor;
use super::NnError;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm layers normalize with batch statistics.
    Train,
    /// Batch-norm layers normalize with running statistics.
    Infer,
}

/// Strided matrix view used by [`gemm`]: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

fn view(data: &[f64], rs: usize, cs: usize) -> View<'_> {
    View { data, rs, cs }
}

/// `c[m x n] = beta * c + a[m x k] * b[k x n]`, with `c` row-major.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |v: &View<'_>, rows: usize, cols: usize| {
        (rows.saturating_sub(1)) * v.rs + (cols.saturating_sub(1)) * v.cs
    };
    if k > 0 {
        assert!(last(&a, m, k) < a.data.len(), "gemm: lhs out of bounds");
        assert!(last(&b, k, n) < b.data.len(), "gemm: rhs out of bounds");
    }
    assert!(c.len() >= m * n, "gemm: output out of bounds");
    // SAFETY: every index touched is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv {
        cols: Vec<f64>,
    },
    BatchNorm {
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    Relu {
        out: Vec<f64>,
    },
    Flatten,
    Dense {
        input: Vec<f64>,
    },
}

/// Intermediates needed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    mode: Mode,
    batch: usize,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, K]` classifier outputs.
    pub logits: Tensor,
    /// `[B, E]` input of the final Dense layer.
    pub embedding: Tensor,
    pub cache: ForwardCache,
}

/// Gathers the zero-padded windows of a channels-last `[B, L, C]` activation
/// into rows of `kernel * C` values (offset-major).
fn im2col(x: &[f64], batch: usize, len: usize, ch: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let width = kernel * ch;
    let mut cols = vec![0.0; batch * len * width];
    for b in 0..batch {
        for l in 0..len {
            let row = &mut cols[(b * len + l) * width..(b * len + l + 1) * width];
            for k in 0..kernel {
                let src = l as isize + k as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = (b * len + src as usize) * ch;
                row[k * ch..(k + 1) * ch].copy_from_slice(&x[s..s + ch]);
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], batch: usize, len: usize, ch: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let width = kernel * ch;
    let mut dx = vec![0.0; batch * len * ch];
    for b in 0..batch {
        for l in 0..len {
            let row = &dcols[(b * len + l) * width..(b * len + l + 1) * width];
            for k in 0..kernel {
                let src = l as isize + k as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let d = (b * len + src as usize) * ch;
                for (t, v) in dx[d..d + ch].iter_mut().zip(&row[k * ch..(k + 1) * ch]) {
                    *t += v;
                }
            }
        }
    }
    dx
}

/// Converts a `[B, C, d]` batch to channels-last storage.
fn to_channels_last(batch: &Tensor, channels: usize, len: usize) -> Vec<f64> {
    if channels == 1 {
        return batch.data().to_vec();
    }
    let b = batch.rows();
    let src = batch.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..b {
        for c in 0..channels {
            for l in 0..len {
                out[(i * len + l) * channels + c] = src[(i * channels + c) * len + l];
            }
        }
    }
    out
}

/// Runs the network on a `[B, C, d]` batch.
///
/// Pure: batch-norm running statistics are not touched. Use
/// [`forward_train`] to also fold the batch statistics into the running ones.
pub fn forward(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &Tensor,
    mode: Mode,
) -> Result<Forward, NnError> {
    let channels = spec.input_channels();
    let len = spec.input_len;
    let shape = batch.shape();
    if shape.len() != 3 || shape[1] != channels || shape[2] != len {
        return Err(NnError::Dimension(format!(
            "batch shape {shape:?} does not match [B, {channels}, {len}]"
        )));
    }
    if !batch.all_finite() {
        return Err(NnError::Validation("batch contains non-finite values".into()));
    }
    let n = shape[0];
    let mut x = to_channels_last(batch, channels, len);
    let mut width = channels;
    let mut caches = Vec::with_capacity(spec.layers.len());
    let mut embedding = Vec::new();
    let last = spec.layers.len() - 1;

    for (i, layer) in spec.layers.iter().enumerate() {
        if i == last {
            embedding = x.clone();
        }
        match *layer {
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => {
                let block = params.block(i).ok_or_else(|| missing(i))?;
                let w = &params.values()[block.weight.clone()];
                let bias = &params.values()[block.bias.clone()];
                let cols = im2col(&x, n, len, in_channels, kernel_size);
                let j = kernel_size * in_channels;
                let rows = n * len;
                let mut out = Vec::with_capacity(rows * out_channels);
                for _ in 0..rows {
                    out.extend_from_slice(bias);
                }
                gemm(rows, j, out_channels, view(&cols, j, 1), view(w, 1, j), 1.0, &mut out);
                caches.push(LayerCache::Conv { cols });
                x = out;
                width = out_channels;
            }
            Layer::BatchNorm1d { channels: c } => {
                let block = params.block(i).ok_or_else(|| missing(i))?;
                let gamma = &params.values()[block.weight.clone()];
                let beta = &params.values()[block.bias.clone()];
                let rows = x.len() / c;
                let (mean, var) = match mode {
                    Mode::Train => batch_moments(&x, rows, c),
                    Mode::Infer => {
                        let (m, v) = block.running.clone().ok_or_else(|| missing(i))?;
                        (params.buffers()[m].to_vec(), params.buffers()[v].to_vec())
                    }
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut x_hat = vec![0.0; x.len()];
                let mut out = vec![0.0; x.len()];
                for r in 0..rows {
                    for ch in 0..c {
                        let idx = r * c + ch;
                        let h = (x[idx] - mean[ch]) * inv_std[ch];
                        x_hat[idx] = h;
                        out[idx] = gamma[ch] * h + beta[ch];
                    }
                }
                caches.push(LayerCache::BatchNorm {
                    x_hat,
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                });
                x = out;
            }
            Layer::Relu => {
                for v in x.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                caches.push(LayerCache::Relu { out: x.clone() });
            }
            Layer::Flatten => {
                width *= len;
                caches.push(LayerCache::Flatten);
            }
            Layer::Dense {
                in_units,
                out_units,
            } => {
                debug_assert_eq!(width, in_units);
                let block = params.block(i).ok_or_else(|| missing(i))?;
                let w = &params.values()[block.weight.clone()];
                let bias = &params.values()[block.bias.clone()];
                let mut out = Vec::with_capacity(n * out_units);
                for _ in 0..n {
                    out.extend_from_slice(bias);
                }
                gemm(n, in_units, out_units, view(&x, in_units, 1), view(w, 1, in_units), 1.0, &mut out);
                caches.push(LayerCache::Dense { input: x });
                x = out;
                width = out_units;
            }
        }
    }

    let logits = Tensor::new(vec![n, width], x)?;
    if !logits.all_finite() {
        return Err(NnError::Validation("forward produced non-finite logits".into()));
    }
    let edim = embedding.len() / n.max(1);
    Ok(Forward {
        logits,
        embedding: Tensor::new(vec![n, edim], embedding)?,
        cache: ForwardCache {
            stamp: params.stamp(),
            mode,
            batch: n,
            layers: caches,
        },
    })
}

/// Train-mode forward that also updates batch-norm running statistics
/// (momentum [`BN_MOMENTUM`], unbiased variance).
pub fn forward_train(
    spec: &NetworkSpec,
    params: &mut ModelParams,
    batch: &Tensor,
) -> Result<Forward, NnError> {
    let out = forward(spec, params, batch, Mode::Train)?;
    let blocks = params.blocks().to_vec();
    for (i, c) in out.cache.layers.iter().enumerate() {
        let LayerCache::BatchNorm {
            batch_mean,
            batch_var,
            x_hat,
            ..
        } = c
        else {
            continue;
        };
        let Some((m_range, v_range)) = blocks.iter().find(|b| b.layer == i).and_then(|b| b.running.clone())
        else {
            continue;
        };
        let count = x_hat.len() / batch_mean.len();
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        let buf = params.buffers_mut();
        for (k, idx) in m_range.enumerate() {
            buf[idx] = (1.0 - BN_MOMENTUM) * buf[idx] + BN_MOMENTUM * batch_mean[k];
        }
        for (k, idx) in v_range.enumerate() {
            buf[idx] = (1.0 - BN_MOMENTUM) * buf[idx] + BN_MOMENTUM * batch_var[k] * unbias;
        }
    }
    Ok(out)
}

fn batch_moments(x: &[f64], rows: usize, c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; c];
    for r in 0..rows {
        for ch in 0..c {
            mean[ch] += x[r * c + ch];
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; c];
    for r in 0..rows {
        for ch in 0..c {
            let d = x[r * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for v in &mut var {
        *v /= rows as f64;
    }
    (mean, var)
}

fn missing(layer: usize) -> NnError {
    NnError::Dimension(format!("no parameter block for layer {layer}"))
}

/// Backpropagates `logits_grad` (and optionally an extra gradient on the
/// embedding) through a train-mode forward pass.
pub fn backward(
    spec: &NetworkSpec,
    params: &ModelParams,
    cache: &ForwardCache,
    logits_grad: &Tensor,
    embedding_grad: Option<&Tensor>,
) -> Result<Gradients, NnError> {
    if cache.stamp != params.stamp() {
        return Err(NnError::StaleCache);
    }
    if cache.mode != Mode::Train {
        return Err(NnError::Validation("backward requires a train-mode forward".into()));
    }
    let n = cache.batch;
    let k = spec.n_classes();
    if logits_grad.shape() != [n, k] {
        return Err(NnError::Dimension(format!(
            "upstream gradient shape {:?}, expected [{n}, {k}]",
            logits_grad.shape()
        )));
    }
    if let Some(e) = embedding_grad {
        if e.shape() != [n, spec.embedding_dim()] {
            return Err(NnError::Dimension(format!(
                "embedding gradient shape {:?}, expected [{n}, {}]",
                e.shape(),
                spec.embedding_dim()
            )));
        }
    }
    let len = spec.input_len;
    let mut grads = Gradients::zeros_like(params);
    let mut g = logits_grad.data().to_vec();
    let last = spec.layers.len() - 1;

    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let need_input_grad = i > 0;
        match (*layer, &cache.layers[i]) {
            (
                Layer::Dense {
                    in_units,
                    out_units,
                },
                LayerCache::Dense { input },
            ) => {
                let block = params.block(i).ok_or_else(|| missing(i))?;
                let w = &params.values()[block.weight.clone()];
                // dW[o, j] = sum_b g[b, o] * x[b, j]
                gemm(
                    out_units,
                    n,
                    in_units,
                    view(&g, 1, out_units),
                    view(input, in_units, 1),
                    0.0,
                    &mut grads.values[block.weight.clone()],
                );
                let db = &mut grads.values[block.bias.clone()];
                for b in 0..n {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += g[b * out_units + o];
                    }
                }
                if need_input_grad {
                    let mut dx = vec![0.0; n * in_units];
                    gemm(n, out_units, in_units, view(&g, out_units, 1), view(w, in_units, 1), 0.0, &mut dx);
                    g = dx;
                }
            }
            (
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                },
                LayerCache::Conv { cols },
            ) => {
                let block = params.block(i).ok_or_else(|| missing(i))?;
                let w = &params.values()[block.weight.clone()];
                let rows = n * len;
                let j = kernel_size * in_channels;
                gemm(
                    out_channels,
                    rows,
                    j,
                    view(&g, 1, out_channels),
                    view(cols, j, 1),
                    0.0,
                    &mut grads.values[block.weight.clone()],
                );
                let db = &mut grads.values[block.bias.clone()];
                for r in 0..rows {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += g[r * out_channels + o];
                    }
                }
                if need_input_grad {
                    let mut dcols = vec![0.0; rows * j];
                    gemm(rows, out_channels, j, view(&g, out_channels, 1), view(w, j, 1), 0.0, &mut dcols);
                    g = col2im(&dcols, n, len, in_channels, kernel_size);
                }
            }
            (Layer::BatchNorm1d { channels: c }, LayerCache::BatchNorm { x_hat, inv_std, .. }) => {
                let block = params.block(i).ok_or_else(|| missing(i))?;
                let gamma = &params.values()[block.weight.clone()];
                let rows = x_hat.len() / c;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for r in 0..rows {
                    for ch in 0..c {
                        let idx = r * c + ch;
                        sum_g[ch] += g[idx];
                        sum_gx[ch] += g[idx] * x_hat[idx];
                    }
                }
                grads.values[block.weight.clone()].copy_from_slice(&sum_gx);
                grads.values[block.bias.clone()].copy_from_slice(&sum_g);
                if need_input_grad {
                    let m = rows as f64;
                    for r in 0..rows {
                        for ch in 0..c {
                            let idx = r * c + ch;
                            g[idx] = gamma[ch] * inv_std[ch] / m
                                * (m * g[idx] - sum_g[ch] - x_hat[idx] * sum_gx[ch]);
                        }
                    }
                }
            }
            (Layer::Relu, LayerCache::Relu { out }) => {
                for (d, o) in g.iter_mut().zip(out) {
                    if *o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            (Layer::Flatten, LayerCache::Flatten) => {}
            _ => return Err(NnError::Validation(format!("cache does not match layer {i}"))),
        }
        if i == last {
            if let Some(e) = embedding_grad {
                for (d, v) in g.iter_mut().zip(e.data()) {
                    *d += v;
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Role;

    fn single_conv_spec() -> NetworkSpec {
        NetworkSpec {
            input_len: 3,
            layers: vec![
                Layer::Conv1d {
                    in_channels: 1,
                    out_channels: 1,
                    kernel_size: 3,
                },
                Layer::Flatten,
                Layer::Dense {
                    in_units: 3,
                    out_units: 3,
                },
            ],
            role: Role::Student,
        }
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let spec = single_conv_spec();
        let mut params = ModelParams::zeros(&spec).unwrap();
        let v = params.values_mut();
        // conv weight [1, 3, 1] = [0, 1, 0]; conv bias 0
        v[1] = 1.0;
        // dense = identity
        let dense_w = 4;
        for d in 0..3 {
            v[dense_w + d * 3 + d] = 1.0;
        }
        let batch = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let out = forward(&spec, &params, &batch, Mode::Infer).unwrap();
        assert_eq!(out.embedding.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(out.logits.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let spec = NetworkSpec::student(4, &[1, 2], &[3], 2).unwrap();
        let mut params = ModelParams::zeros(&spec).unwrap();
        let bias = params.block(spec.layers.len() - 1).unwrap().bias.clone();
        params.values_mut()[bias.clone()].copy_from_slice(&[0.25, -1.5]);
        let batch = Tensor::new(vec![2, 1, 4], vec![0.3, -2.0, 5.0, 1.0, 9.0, 8.0, 7.0, 6.0]).unwrap();
        let out = forward(&spec, &params, &batch, Mode::Infer).unwrap();
        assert_eq!(out.logits.data(), &[0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = single_conv_spec();
        let params = ModelParams::zeros(&spec).unwrap();
        let batch = Tensor::zeros(vec![2, 1, 4]);
        assert!(matches!(
            forward(&spec, &params, &batch, Mode::Infer),
            Err(NnError::Dimension(_))
        ));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let spec = single_conv_spec();
        let params = ModelParams::zeros(&spec).unwrap();
        let batch = Tensor::new(vec![1, 1, 3], vec![1.0, f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            forward(&spec, &params, &batch, Mode::Infer),
            Err(NnError::Validation(_))
        ));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let spec = single_conv_spec();
        let mut params = ModelParams::zeros(&spec).unwrap();
        let batch = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let out = forward(&spec, &params, &batch, Mode::Train).unwrap();
        params.values_mut()[0] = 0.5;
        let up = Tensor::zeros(vec![1, 3]);
        assert!(matches!(
            backward(&spec, &params, &out.cache, &up, None),
            Err(NnError::StaleCache)
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = NetworkSpec::teacher(5, &[1, 3, 2], &[4], 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(&spec, &mut rng).unwrap();
        let batch = Tensor::new(vec![2, 1, 5], (0..10).map(|v| v as f64 * 0.1).collect()).unwrap();
        let out = forward(&spec, &params, &batch, Mode::Train).unwrap();
        let g = backward(&spec, &params, &out.cache, &Tensor::zeros(vec![2, 3]), None).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
    }

    use rand::SeedableRng;

    #[test]
    fn forward_train_updates_running_stats_only_in_train() {
        let spec = NetworkSpec::teacher(4, &[1, 2], &[], 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParams::init(&spec, &mut rng).unwrap();
        let before = params.buffers().to_vec();
        let batch = Tensor::new(vec![2, 1, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 8.0]).unwrap();
        forward(&spec, &params, &batch, Mode::Train).unwrap();
        forward(&spec, &params, &batch, Mode::Infer).unwrap();
        assert_eq!(params.buffers(), &before[..]);
        forward_train(&spec, &mut params, &batch).unwrap();
        assert_ne!(params.buffers(), &before[..]);
    }
}
