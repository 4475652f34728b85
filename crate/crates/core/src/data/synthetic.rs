use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::table::RawTable;
use super::DataError;

/// Gaussian class-cluster traffic stand-in used when no dataset files are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_informative: usize,
    pub n_redundant: usize,
    pub n_noise: usize,
    /// First entry is the benign class.
    pub class_names: Vec<String>,
    pub class_weights: Vec<f64>,
    /// Within-class spread relative to the typical half-distance between class centres.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_test: 2_000,
            n_informative: 10,
            n_redundant: 10,
            n_noise: 20,
            class_names: ["normal", "dos", "probe", "r2l", "u2r"].iter().map(|s| s.to_string()).collect(),
            class_weights: vec![0.5, 0.25, 0.15, 0.07, 0.03],
            overlap: 0.3,
            seed: 0,
        }
    }
}

const PROTOCOLS: [&str; 3] = ["icmp", "tcp", "udp"];

struct Model {
    centres: Vec<Vec<f64>>,
    mixing: Vec<Vec<f64>>,
    protocol_bias: Vec<usize>,
    cumulative: Vec<f64>,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.class_names.len() < 2 || self.class_names.len() != self.class_weights.len() {
            return Err(DataError::Invalid("synthetic data needs >= 2 classes with one weight each".into()));
        }
        if self.class_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(DataError::Invalid("class weights must be positive".into()));
        }
        if self.n_informative == 0 || !(self.overlap >= 0.0) {
            return Err(DataError::Invalid("need informative features and a non-negative overlap".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_informative + self.n_redundant + self.n_noise + 1
    }

    fn model(&self, rng: &mut ChaCha8Rng) -> Model {
        let k = self.class_names.len();
        // centre coordinates with variance 2/n_inf put class pairs about 2 apart
        let spread = Normal::new(0.0, (2.0 / self.n_informative as f64).sqrt()).expect("finite std");
        let centres = (0..k)
            .map(|_| (0..self.n_informative).map(|_| spread.sample(rng)).collect())
            .collect();
        let mixing = (0..self.n_redundant)
            .map(|_| {
                (0..self.n_informative)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / (self.n_informative as f64).sqrt())
                    .collect()
            })
            .collect();
        let protocol_bias = (0..k).map(|_| rng.random_range(0..PROTOCOLS.len())).collect();
        let total: f64 = self.class_weights.iter().sum();
        let cumulative = self
            .class_weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w / total;
                Some(*acc)
            })
            .collect();
        Model {
            centres,
            mixing,
            protocol_bias,
            cumulative,
        }
    }

    fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = (0..self.n_informative).map(|i| format!("inf_{i}")).collect();
        cols.extend((0..self.n_redundant).map(|i| format!("red_{i}")));
        cols.extend((0..self.n_noise).map(|i| format!("noise_{i}")));
        cols.push("proto".into());
        cols.push("class".into());
        cols
    }

    fn draw(&self, m: &Model, rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<String>> {
        let noise_std = 2.0 * self.overlap;
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let class = m.cumulative.iter().position(|&c| u < c).unwrap_or(m.cumulative.len() - 1);
                let inf: Vec<f64> = m.centres[class]
                    .iter()
                    .map(|c| c + noise_std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let mut row: Vec<String> = inf.iter().map(|v| v.to_string()).collect();
                for w in &m.mixing {
                    let v: f64 = w.iter().zip(&inf).map(|(a, b)| a * b).sum::<f64>()
                        + 0.1 * rng.sample::<f64, _>(StandardNormal);
                    row.push(v.to_string());
                }
                for _ in 0..self.n_noise {
                    row.push(rng.random::<f64>().to_string());
                }
                let proto = if rng.random_bool(0.7) {
                    m.protocol_bias[class]
                } else {
                    rng.random_range(0..PROTOCOLS.len())
                };
                row.push(PROTOCOLS[proto].to_string());
                row.push(self.class_names[class].clone());
                row
            })
            .collect()
    }
}

/// Draws a `(train, test)` pair from the same class-conditional distribution.
pub fn generate(cfg: &SyntheticConfig) -> Result<(RawTable, RawTable), DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = cfg.model(&mut rng);
    let train = cfg.draw(&model, &mut rng, cfg.n_train);
    let test = cfg.draw(&model, &mut rng, cfg.n_test);
    Ok((
        RawTable::from_rows(cfg.columns(), train, "class")?,
        RawTable::from_rows(cfg.columns(), test, "class")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnKind;

    #[test]
    fn shapes_and_kinds() {
        let cfg = SyntheticConfig {
            n_train: 300,
            n_test: 50,
            ..Default::default()
        };
        let (train, test) = generate(&cfg).unwrap();
        assert_eq!(train.n_rows(), 300);
        assert_eq!(test.n_rows(), 50);
        assert_eq!(train.feature_columns().len(), cfg.n_features());
        assert_eq!(train.kinds[cfg.n_features() - 1], ColumnKind::Categorical);
        assert_eq!(train.kinds[0], ColumnKind::Numeric);
        assert!(train.labels().unwrap().contains(&"normal"));
    }

    #[test]
    fn seeded_generation_repeats() {
        let cfg = SyntheticConfig {
            n_train: 40,
            n_test: 10,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }
}
