//! Supervised entropy, temperature softmax and the distillation loss.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Binary,
    Multi,
}

/// Scalar loss with its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

fn log_softmax_row(row: &[f64], scale: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v * scale - max;
        sum += o.exp();
    }
    let log_sum = sum.ln();
    for o in out.iter_mut() {
        *o -= log_sum;
    }
}

fn check_matrix(t: &Tensor, what: &str) -> Result<(usize, usize), NnError> {
    match t.shape() {
        [n, k] if *k > 0 => Ok((*n, *k)),
        s => Err(NnError::Dimension(format!("{what} must be [B, K], got {s:?}"))),
    }
}

/// Row-wise `log softmax(logits / zeta)`.
pub fn log_softmax_temperature(logits: &Tensor, zeta: f64) -> Result<Tensor, NnError> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(NnError::Validation(format!("temperature must be positive, got {zeta}")));
    }
    let (n, k) = check_matrix(logits, "logits")?;
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        log_softmax_row(logits.row(i), 1.0 / zeta, &mut out[i * k..(i + 1) * k]);
    }
    Tensor::new(vec![n, k], out)
}

/// Soft probabilities `exp(b_k / zeta) / sum_u exp(b_u / zeta)`, evaluated in log space.
pub fn softmax_temperature(logits: &Tensor, zeta: f64) -> Result<Tensor, NnError> {
    let mut t = log_softmax_temperature(logits, zeta)?;
    for v in t.data_mut() {
        *v = v.exp();
    }
    Ok(t)
}

/// Mean cross entropy over the batch. Binary mode is two-class cross entropy
/// over a two-unit head.
pub fn loss_supervised(logits: &Tensor, labels: &[usize], mode: LabelMode) -> Result<LossOutput, NnError> {
    let (n, k) = check_matrix(logits, "logits")?;
    if labels.len() != n {
        return Err(NnError::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    if mode == LabelMode::Binary && k != 2 {
        return Err(NnError::Validation(format!("binary mode needs 2 outputs, got {k}")));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(NnError::Validation(format!("label {bad} outside [0, {k})")));
    }
    let logp = log_softmax_temperature(logits, 1.0)?;
    let inv_n = 1.0 / n.max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        let row = logp.row(i);
        value -= row[y];
        for j in 0..k {
            grad[i * k + j] = row[j].exp() * inv_n;
        }
        grad[i * k + y] -= inv_n;
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad: Tensor::new(vec![n, k], grad)?,
    })
}

/// Distillation loss `alpha * (1/n) * sum_t zeta^2 * KL(p_teacher || p_student)`
/// with both distributions softened at temperature `zeta`.
///
/// `n_samples` is the normalizer (the batch size during training). The
/// gradient is with respect to the student logits.
pub fn loss_kd(
    teacher_logits: &Tensor,
    student_logits: &Tensor,
    zeta: f64,
    alpha: bool,
    n_samples: usize,
) -> Result<LossOutput, NnError> {
    if teacher_logits.shape() != student_logits.shape() {
        return Err(NnError::Dimension(format!(
            "teacher {:?} vs student {:?}",
            teacher_logits.shape(),
            student_logits.shape()
        )));
    }
    let (n, k) = check_matrix(student_logits, "student logits")?;
    if !alpha {
        return Ok(LossOutput {
            value: 0.0,
            grad: Tensor::zeros(vec![n, k]),
        });
    }
    if n_samples == 0 {
        return Err(NnError::Validation("n_samples must be positive".into()));
    }
    let log_p = log_softmax_temperature(teacher_logits, zeta)?;
    let log_q = log_softmax_temperature(student_logits, zeta)?;
    let inv_n = 1.0 / n_samples as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * k];
    for i in 0..n {
        let lp = log_p.row(i);
        let lq = log_q.row(i);
        let mut kl = 0.0;
        for j in 0..k {
            let p = lp[j].exp();
            if p > 0.0 {
                kl += p * (lp[j] - lq[j]);
            }
            // d/dz [zeta^2 KL] = zeta * (q - p)
            grad[i * k + j] = zeta * (lq[j].exp() - p) * inv_n;
        }
        value += zeta * zeta * kl.max(0.0);
    }
    Ok(LossOutput {
        value: value * inv_n,
        grad: Tensor::new(vec![n, k], grad)?,
    })
}
