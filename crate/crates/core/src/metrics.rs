//! Confusion-matrix metrics, the overall-detection-correctness count,
//! boundary distance and the analytic cost comparison.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("validation error: {0}")]
    Validation(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Validation(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// `K x K` counts indexed `[truth][pred]`; every class except `normal_class`
/// is an anomaly and anomaly is the positive class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub normal_class: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl ConfusionMatrix {
    pub fn empty(n_classes: usize, normal_class: usize) -> Self {
        Self {
            n_classes,
            normal_class,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Exact-match count (the diagonal).
    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|k| self.get(k, k)).sum()
    }

    /// Pools every anomaly class into one positive class.
    pub fn binary(&self) -> BinaryCounts {
        let mut b = BinaryCounts::default();
        for t in 0..self.n_classes {
            for p in 0..self.n_classes {
                let c = self.get(t, p);
                match (t == self.normal_class, p == self.normal_class) {
                    (false, false) => b.tp += c,
                    (true, true) => b.tn += c,
                    (true, false) => b.fp += c,
                    (false, true) => b.fn_ += c,
                }
            }
        }
        b
    }

    /// Adds another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes || other.normal_class != self.normal_class {
            return Err(MetricsError::Validation("confusion matrices have different layouts".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Tallies predictions against truth. Binary data uses `n_classes = 2` with
/// anomaly 0 and normal 1.
pub fn confusion(pred: &[usize], truth: &[usize], n_classes: usize, normal_class: usize) -> Result<ConfusionMatrix> {
    check_lengths(pred, truth)?;
    if normal_class >= n_classes {
        return Err(MetricsError::Validation(format!("normal class {normal_class} outside {n_classes} classes")));
    }
    let mut cm = ConfusionMatrix::empty(n_classes, normal_class);
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(MetricsError::Validation(format!("label {} outside {n_classes} classes", p.max(t))));
        }
        cm.counts[t * n_classes + p] += 1;
    }
    Ok(cm)
}

/// Ratios that would divide by zero are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub far: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn binary_metrics(b: &BinaryCounts) -> BinaryMetrics {
    BinaryMetrics {
        accuracy: ratio(b.tp + b.tn, b.total()),
        precision: ratio(b.tp, b.tp + b.fp),
        recall: ratio(b.tp, b.tp + b.fn_),
        f1: ratio(2 * b.tp, 2 * b.tp + b.fp + b.fn_),
        far: ratio(b.fp, b.fp + b.tn),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub aa: Option<f64>,
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub afs: Option<f64>,
    /// Participants whose value was absent, per metric in the order above.
    pub skipped: [usize; 4],
}

/// Means over the clients with `alpha = true`; absent values are skipped and counted.
pub fn averaged_metrics(per_client: &[BinaryMetrics], alphas: &[bool]) -> Result<AveragedMetrics> {
    if per_client.len() != alphas.len() {
        return Err(MetricsError::Validation("one availability flag per client required".into()));
    }
    let active: Vec<&BinaryMetrics> = per_client.iter().zip(alphas).filter(|(_, &a)| a).map(|(m, _)| m).collect();
    if active.is_empty() {
        return Err(MetricsError::Validation("no participating clients".into()));
    }
    let mut out = AveragedMetrics::default();
    let fields: [fn(&BinaryMetrics) -> Option<f64>; 4] = [|m| m.accuracy, |m| m.precision, |m| m.recall, |m| m.f1];
    let mut means = [None; 4];
    for (i, get) in fields.iter().enumerate() {
        let vals: Vec<f64> = active.iter().filter_map(|m| get(m)).collect();
        out.skipped[i] = active.len() - vals.len();
        if !vals.is_empty() {
            means[i] = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    [out.aa, out.ap, out.ar, out.afs] = means;
    Ok(out)
}

/// Exact-match fraction.
pub fn multiclass_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(MetricsError::Validation("no samples".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Correctly flagged anomalies plus correctly passed normal records, with all
/// anomaly classes pooled.
pub fn odc(pred: &[usize], truth: &[usize], normal_class: usize) -> Result<u64> {
    check_lengths(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .filter(|(&p, &t)| (p == normal_class) == (t == normal_class))
        .count() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    L1,
    #[default]
    L2,
}

/// Mean distance over all malicious/benign pairs.
pub fn boundary_distance(malicious: &[Vec<f64>], benign: &[Vec<f64>], metric: DistanceMetric) -> Result<f64> {
    if malicious.is_empty() || benign.is_empty() {
        return Err(MetricsError::Validation("both sample sets must be non-empty".into()));
    }
    let dim = malicious[0].len();
    if malicious.iter().chain(benign).any(|v| v.len() != dim) {
        return Err(MetricsError::Validation("embeddings differ in length".into()));
    }
    let mut total = 0.0;
    for a in malicious {
        for b in benign {
            total += match metric {
                DistanceMetric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
                DistanceMetric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            };
        }
    }
    Ok(total / (malicious.len() * benign.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModelInput {
    pub n_malicious: u64,
    pub n_benign: u64,
    pub eps_dist: u64,
    pub n_servers: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostComparison {
    pub cost_eq2: u64,
    pub cost_eq5: u64,
    pub eq5_cheaper: bool,
}

/// Operation counts of the pairwise-boundary objective versus the ODC count.
pub fn cost_comparison(inp: CostModelInput) -> Result<CostComparison> {
    if inp.n_malicious < 1 || inp.n_benign < 1 || inp.eps_dist < 1 || inp.n_servers < 1 {
        return Err(MetricsError::Validation("cost model inputs must all be at least 1".into()));
    }
    let cost_eq2 = inp.n_servers * (inp.n_malicious * inp.n_benign * inp.eps_dist + 2);
    let cost_eq5 = inp.n_servers * (inp.n_malicious + inp.n_benign);
    Ok(CostComparison {
        cost_eq2,
        cost_eq5,
        eq5_cheaper: cost_eq5 < cost_eq2,
    })
}
