//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use efpkd::nn::{Layer, ModelParams, NetworkSpec, Tensor, BN_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct NaiveOutput {
    pub logits: Vec<Vec<f64>>,
    pub embedding: Vec<Vec<f64>>,
    /// Every value fed into a ReLU, used to detect finite-difference kinks.
    pub pre_relu: Vec<f64>,
}

#[derive(Clone)]
enum Act {
    /// `[batch][channel][position]`
    Seq(Vec<Vec<Vec<f64>>>),
    Flat(Vec<Vec<f64>>),
}

/// Straight-line, channel-first evaluation of the network with scalar loops.
/// `records` holds one single-channel record per sample.
pub fn naive_forward(spec: &NetworkSpec, params: &ModelParams, records: &[Vec<f64>], train: bool) -> NaiveOutput {
    let len = spec.input_len;
    let mut act = Act::Seq(records.iter().map(|r| vec![r.clone()]).collect());
    let mut pre_relu = Vec::new();
    let mut embedding = Vec::new();
    let last = spec.layers.len() - 1;
    for (li, layer) in spec.layers.iter().enumerate() {
        if li == last {
            if let Act::Flat(x) = &act {
                embedding = x.clone();
            }
        }
        act = match (*layer, act) {
            (Layer::Conv1d { in_channels, out_channels, kernel_size }, Act::Seq(x)) => {
                let w = params.weight(li).unwrap();
                let b = params.bias(li).unwrap();
                let pad = kernel_size as isize / 2;
                let mut out = vec![vec![vec![0.0; len]; out_channels]; x.len()];
                for s in 0..x.len() {
                    for o in 0..out_channels {
                        for p in 0..len {
                            let mut acc = b[o];
                            for k in 0..kernel_size {
                                let q = p as isize + k as isize - pad;
                                if q < 0 || q >= len as isize {
                                    continue;
                                }
                                for c in 0..in_channels {
                                    // weight layout [out, kernel, in]
                                    acc += w[(o * kernel_size + k) * in_channels + c] * x[s][c][q as usize];
                                }
                            }
                            out[s][o][p] = acc;
                        }
                    }
                }
                Act::Seq(out)
            }
            (Layer::BatchNorm1d { channels }, Act::Seq(x)) => {
                let gamma = params.weight(li).unwrap();
                let beta = params.bias(li).unwrap();
                let block = params.block(li).unwrap().clone();
                let (mr, vr) = block.running.unwrap();
                let mut out = x.clone();
                for c in 0..channels {
                    let (mean, var) = if train {
                        let vals: Vec<f64> = x.iter().flat_map(|s| s[c].iter().copied()).collect();
                        let m = vals.iter().sum::<f64>() / vals.len() as f64;
                        let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
                        (m, v)
                    } else {
                        (params.buffers()[mr.start + c], params.buffers()[vr.start + c])
                    };
                    for s in 0..x.len() {
                        for p in 0..len {
                            out[s][c][p] = gamma[c] * (x[s][c][p] - mean) / (var + BN_EPS).sqrt() + beta[c];
                        }
                    }
                }
                Act::Seq(out)
            }
            (Layer::Relu, Act::Seq(mut x)) => {
                for v in x.iter_mut().flatten().flatten() {
                    pre_relu.push(*v);
                    *v = v.max(0.0);
                }
                Act::Seq(x)
            }
            (Layer::Relu, Act::Flat(mut x)) => {
                for v in x.iter_mut().flatten() {
                    pre_relu.push(*v);
                    *v = v.max(0.0);
                }
                Act::Flat(x)
            }
            (Layer::Flatten, Act::Seq(x)) => {
                // position-major, channel-minor
                Act::Flat(
                    x.iter()
                        .map(|s| {
                            let ch = s.len();
                            (0..len * ch).map(|i| s[i % ch][i / ch]).collect()
                        })
                        .collect(),
                )
            }
            (Layer::Dense { in_units, out_units }, Act::Flat(x)) => {
                let w = params.weight(li).unwrap();
                let b = params.bias(li).unwrap();
                Act::Flat(
                    x.iter()
                        .map(|row| {
                            (0..out_units)
                                .map(|o| {
                                    let mut acc = b[o];
                                    for i in 0..in_units {
                                        acc += w[o * in_units + i] * row[i];
                                    }
                                    acc
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            (l, _) => panic!("unsupported layer placement {l:?}"),
        };
    }
    let Act::Flat(logits) = act else { panic!("network must end flat") };
    NaiveOutput { logits, embedding, pre_relu }
}

pub fn batch_tensor(records: &[Vec<f64>]) -> Tensor {
    let d = records[0].len();
    Tensor::new(vec![records.len(), 1, d], records.concat()).unwrap()
}

pub fn random_records(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Small random architecture covering every layer kind.
pub fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let d = rng.random_range(2..6);
    let n_conv = rng.random_range(1..3);
    let mut channels = vec![1];
    for _ in 0..n_conv {
        channels.push(rng.random_range(1..4));
    }
    let hidden: Vec<usize> = if rng.random_bool(0.5) { vec![rng.random_range(2..5)] } else { vec![] };
    let k = rng.random_range(2..5);
    let bn = rng.random_bool(0.5);
    NetworkSpec::conv_stack(d, &channels, &hidden, k, bn, efpkd::nn::Role::Teacher).unwrap()
}

/// Randomizes batch-norm scale/shift away from identity too.
pub fn random_params(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::init(spec, rng).unwrap();
    let vals: Vec<f64> = p
        .values()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    let bufs = p.buffers().to_vec();
    p.assign(vals, bufs).unwrap();
    p
}

/// Central finite difference of `f` at every coordinate of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small encoded synthetic split for protocol tests.
pub fn toy_data(n_train: usize, n_test: usize, top_k: usize, mode: efpkd::nn::LabelMode, seed: u64) -> efpkd::data::PreparedData {
    use efpkd::data::{generate, prepare, DatasetProfile, SyntheticConfig};
    let cfg = SyntheticConfig {
        n_train,
        n_test,
        seed,
        ..Default::default()
    };
    let (train, test) = generate(&cfg).unwrap();
    prepare(&train, &test, &DatasetProfile::synthetic(), mode, top_k).unwrap()
}

/// Tiny teacher/student pair for an input of `d` features.
pub fn toy_specs(d: usize, k: usize) -> efpkd::fl::ModelSpecs {
    efpkd::fl::ModelSpecs {
        teacher: NetworkSpec::teacher(d, &[1, 4, 4], &[8], k).unwrap(),
        student: NetworkSpec::student(d, &[1, 3], &[6], k).unwrap(),
    }
}
