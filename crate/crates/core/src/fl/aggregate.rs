use rand::Rng;

use super::FlError;
use crate::nn::ModelParams;

/// Independent Bernoulli(`probability`) flags, redrawn until someone participates.
pub fn sample_availability<R: Rng + ?Sized>(n_clients: usize, probability: f64, rng: &mut R) -> Vec<bool> {
    if n_clients == 0 {
        return Vec::new();
    }
    let p = probability.clamp(f64::MIN_POSITIVE, 1.0);
    loop {
        let flags: Vec<bool> = (0..n_clients).map(|_| rng.random_bool(p)).collect();
        if flags.iter().any(|&a| a) {
            return flags;
        }
    }
}

/// Normalized weights `alpha_s |D_s| / sum(alpha |D|)`; zero for absent clients.
pub fn model_weights(data_sizes: &[usize], alphas: &[bool]) -> Result<Vec<f64>, FlError> {
    if data_sizes.len() != alphas.len() {
        return Err(FlError::Aggregation("one availability flag per client required".into()));
    }
    let h: usize = data_sizes.iter().zip(alphas).filter(|(_, &a)| a).map(|(s, _)| s).sum();
    if h == 0 {
        return Err(FlError::Aggregation("no participating client holds data".into()));
    }
    Ok(data_sizes
        .iter()
        .zip(alphas)
        .map(|(&s, &a)| if a { s as f64 / h as f64 } else { 0.0 })
        .collect())
}

/// Data-size-weighted average of the participants' parameters (and buffers).
pub fn aggregate_models(params: &[&ModelParams], data_sizes: &[usize], alphas: &[bool]) -> Result<ModelParams, FlError> {
    if params.len() != data_sizes.len() {
        return Err(FlError::Aggregation("one data size per model required".into()));
    }
    let weights = model_weights(data_sizes, alphas)?;
    let mut parts: Vec<(f64, usize, &ModelParams)> = (0..params.len())
        .filter(|&i| alphas[i])
        .map(|i| (weights[i], data_sizes[i], params[i]))
        .collect();
    let first = parts[0].2;
    if parts.iter().any(|(_, _, p)| !p.same_layout(first)) {
        return Err(FlError::Aggregation("models do not share one architecture".into()));
    }
    // canonical order keeps the floating-point sum independent of client order
    parts.sort_by(|a, b| {
        a.1.cmp(&b.1).then_with(|| {
            a.2.values()
                .iter()
                .zip(b.2.values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut values = vec![0.0; first.total_count()];
    let mut buffers = vec![0.0; first.buffers().len()];
    for (w, _, p) in &parts {
        for (acc, v) in values.iter_mut().zip(p.values()) {
            *acc += w * v;
        }
        for (acc, v) in buffers.iter_mut().zip(p.buffers()) {
            *acc += w * v;
        }
    }
    let mut out = first.clone();
    out.assign(values, buffers)?;
    Ok(out)
}
