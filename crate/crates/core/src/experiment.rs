//! Experiment configuration, the strategy/seed sweep and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    dirichlet_partition, generate, ingest, prepare, DataError, DatasetProfile, PartitionPlan, PreparedData, RawTable,
    SyntheticConfig,
};
use crate::fl::{predict, run_training, FlError, ModelSpecs, RoundConfig, RoundReport, Strategy, TrainingRun};
use crate::intervention::{detect, EvaluationBundle, InterventionError, ModelArtifact};
use crate::metrics::{averaged_metrics, AveragedMetrics, BinaryMetrics, ConfusionMatrix, MetricsError};
use crate::nn::{LabelMode, NetworkSpec, NnError, STUDENT_CONV_CHANNELS, STUDENT_HIDDEN, TEACHER_CONV_CHANNELS, TEACHER_HIDDEN};

/// Rendered in report tables wherever a metric is undefined.
pub const ABSENT: &str = "NA";

pub const DESK_TEACHER_CONV_CHANNELS: [usize; 4] = [1, 32, 64, 128];
/// Student learning rate under the desk-scale preset, scaled up for the
/// roughly hundredfold smaller number of SGD steps.
pub const DESK_STUDENT_LR: f64 = 1e-2;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("data stage: {0}")]
    Data(#[from] DataError),
    #[error("model stage: {0}")]
    Nn(#[from] NnError),
    #[error("training stage: {0}")]
    Training(#[from] FlError),
    #[error("application stage: {0}")]
    Application(#[from] InterventionError),
    #[error("metrics stage: {0}")]
    Metrics(#[from] MetricsError),
    #[error("report stage: {path}: {message}")]
    Report { path: String, message: String },
}

impl ExperimentError {
    pub fn stage(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config",
            ExperimentError::Data(_) => "data",
            ExperimentError::Nn(_) => "model",
            ExperimentError::Training(_) => "training",
            ExperimentError::Application(_) => "application",
            ExperimentError::Metrics(_) => "metrics",
            ExperimentError::Report { .. } => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub teacher_conv_channels: Vec<usize>,
    pub teacher_hidden: Vec<usize>,
    pub student_conv_channels: Vec<usize>,
    pub student_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            teacher_conv_channels: TEACHER_CONV_CHANNELS.to_vec(),
            teacher_hidden: TEACHER_HIDDEN.to_vec(),
            student_conv_channels: STUDENT_CONV_CHANNELS.to_vec(),
            student_hidden: STUDENT_HIDDEN.to_vec(),
        }
    }
}

/// TOML experiment description. Values in `[round]` override the round
/// defaults, whose `zeta` and `batch_size` come from the dataset profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Preset name: nsl-kdd, unsw-nb15, iotid20, synthetic or generic.
    pub dataset: String,
    /// Replaces the preset entirely when given.
    pub profile: Option<DatasetProfile>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub mode: LabelMode,
    pub n_clients: usize,
    pub delta: f64,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Defaults to the profile's value.
    pub top_k: Option<usize>,
    pub out_dir: PathBuf,
    /// Subsample caps, reduced teacher widths and a larger student learning rate.
    pub desk_scale: bool,
    pub train_cap: usize,
    pub test_cap: usize,
    pub subsample_seed: u64,
    pub architecture: Architecture,
    pub synthetic: SyntheticConfig,
    pub round: toml::Table,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            profile: None,
            train_path: None,
            test_path: None,
            mode: LabelMode::Binary,
            n_clients: 10,
            delta: 0.9,
            strategies: vec![Strategy::Efpkd, Strategy::Fedavg],
            seeds: vec![0],
            top_k: None,
            out_dir: PathBuf::from("runs"),
            desk_scale: false,
            train_cap: 10_000,
            test_cap: 2_000,
            subsample_seed: 0,
            architecture: Architecture::default(),
            synthetic: SyntheticConfig::default(),
            round: toml::Table::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Sets one `[round]` key, replacing any file value.
    pub fn set_round<V: Into<toml::Value>>(&mut self, key: &str, value: V) {
        self.round.insert(key.to_string(), value.into());
    }

    pub fn resolved_profile(&self) -> Result<DatasetProfile, ExperimentError> {
        match &self.profile {
            Some(p) => Ok(p.clone()),
            None => DatasetProfile::preset(&self.dataset)
                .ok_or_else(|| ExperimentError::Config(format!("unknown dataset `{}`", self.dataset))),
        }
    }

    /// Round settings for one strategy and seed.
    pub fn round_config(&self, strategy: Strategy, seed: u64) -> Result<RoundConfig, ExperimentError> {
        let profile = self.resolved_profile()?;
        let mut base = RoundConfig {
            zeta: profile.zeta,
            batch_size: profile.batch_size,
            ..RoundConfig::default()
        };
        if self.desk_scale {
            base.student_lr = DESK_STUDENT_LR;
        }
        let mut table = toml::Table::try_from(&base).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for (k, v) in &self.round {
            if !table.contains_key(k) {
                return Err(ExperimentError::Config(format!("unknown round key `{k}`")));
            }
            table.insert(k.clone(), v.clone());
        }
        let mut cfg: RoundConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ExperimentError::Config(format!("[round]: {e}")))?;
        cfg.strategy = strategy;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn teacher_conv_channels(&self) -> Vec<usize> {
        if self.desk_scale {
            DESK_TEACHER_CONV_CHANNELS.to_vec()
        } else {
            self.architecture.teacher_conv_channels.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let profile = self.resolved_profile()?;
        if self.n_clients == 0 {
            return bad("n_clients must be >= 1".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.top_k == Some(0) {
            return bad("top_k must be >= 1".into());
        }
        if profile.name != "synthetic" && (self.train_path.is_none() || self.test_path.is_none()) {
            return bad(format!("dataset `{}` needs train_path and test_path", profile.name));
        }
        for s in &self.strategies {
            self.round_config(*s, self.seeds[0])?;
        }
        Ok(())
    }
}

/// Raw splits after desk-scale subsampling, plus their encoded form.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub profile: DatasetProfile,
    pub raw_test: RawTable,
    pub prepared: PreparedData,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData, ExperimentError> {
    let profile = cfg.resolved_profile()?;
    let (mut train, mut test) = if profile.name == "synthetic" && cfg.train_path.is_none() {
        generate(&cfg.synthetic)?
    } else {
        let path = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| ExperimentError::Config(format!("{what} is required for `{}`", profile.name)))
        };
        (
            ingest(&path(&cfg.train_path, "train_path")?, &profile)?,
            ingest(&path(&cfg.test_path, "test_path")?, &profile)?,
        )
    };
    if cfg.desk_scale {
        train.subsample(cfg.train_cap, cfg.subsample_seed);
        test.subsample(cfg.test_cap, cfg.subsample_seed.wrapping_add(1));
    }
    let top_k = cfg.top_k.unwrap_or(profile.top_k);
    let prepared = prepare(&train, &test, &profile, cfg.mode, top_k)?;
    Ok(LoadedData {
        profile,
        raw_test: test,
        prepared,
    })
}

pub fn model_specs(cfg: &ExperimentConfig, d: usize, n_classes: usize) -> Result<ModelSpecs, ExperimentError> {
    Ok(ModelSpecs {
        teacher: NetworkSpec::teacher(d, &cfg.teacher_conv_channels(), &cfg.architecture.teacher_hidden, n_classes)?,
        student: NetworkSpec::student(
            d,
            &cfg.architecture.student_conv_channels,
            &cfg.architecture.student_hidden,
            n_classes,
        )?,
    })
}

/// Final outcome of one strategy under one seed.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub round_config: RoundConfig,
    pub rounds: Vec<RoundReport>,
    /// Global model on the test split, or pooled personal models when no
    /// global model exists.
    pub evaluation: EvaluationBundle,
    pub evaluated_global_model: bool,
    pub per_client: Vec<BinaryMetrics>,
    pub averaged: AveragedMetrics,
    pub model_bytes: u64,
    pub prototype_bytes: u64,
    pub init_model_bytes: u64,
    pub artifact: Option<ModelArtifact>,
    pub blocklog_csv: Option<String>,
}

fn personal_evaluation(
    run: &TrainingRun,
    data: &PreparedData,
) -> Result<(Vec<BinaryMetrics>, EvaluationBundle), ExperimentError> {
    let test = &data.test;
    let (k, normal) = (test.n_classes(), test.normal_class);
    let mut pooled = ConfusionMatrix::empty(k, normal);
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut per_client = Vec::with_capacity(run.clients.len());
    for c in &run.clients {
        let pred = predict(&run.specs.student, &c.student, &test.features)?;
        let b = EvaluationBundle::compute(&pred, &test.labels, k, normal)?;
        pooled.merge(&b.confusion)?;
        per_client.push(b.binary_metrics);
        preds.extend(pred);
        truth.extend_from_slice(&test.labels);
    }
    let bundle = EvaluationBundle::compute(&preds, &truth, k, normal)?;
    debug_assert_eq!(bundle.confusion, pooled);
    Ok((per_client, bundle))
}

/// Trains one strategy on a fixed partition and evaluates it.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    plan: &PartitionPlan,
    strategy: Strategy,
    seed: u64,
) -> Result<RunResult, ExperimentError> {
    let round_config = cfg.round_config(strategy, seed)?;
    let prepared = &data.prepared;
    let specs = model_specs(cfg, prepared.train.n_features(), prepared.train.n_classes())?;
    let run = run_training(&prepared.train, plan, &specs, &round_config, Some(&prepared.test))?;
    let (per_client, pooled) = personal_evaluation(&run, prepared)?;
    let alphas: Vec<bool> = run.clients.iter().map(|c| c.alpha).collect();
    let averaged = averaged_metrics(&per_client, &alphas)?;

    let (evaluation, artifact, blocklog_csv) = match &run.global.model {
        Some(g) => {
            let artifact = ModelArtifact {
                spec: specs.student.clone(),
                params: g.clone(),
                selection: prepared.selection.clone(),
                stats: prepared.train.stats.clone(),
                profile: data.profile.clone(),
            };
            let outcome = detect(&artifact, &data.raw_test)?;
            let mut buf = Vec::new();
            outcome
                .log
                .write_csv(&mut buf, artifact.class_names())
                .map_err(|e| ExperimentError::Report {
                    path: "blocklog.csv".into(),
                    message: e.to_string(),
                })?;
            let evaluation = outcome
                .evaluation
                .ok_or_else(|| ExperimentError::Config("test split lost its labels".into()))?;
            (evaluation, Some(artifact), Some(String::from_utf8(buf).expect("csv output is UTF-8")))
        }
        None => (pooled, None, None),
    };
    Ok(RunResult {
        strategy,
        seed,
        rounds: run.reports.clone(),
        evaluated_global_model: artifact.is_some(),
        evaluation,
        per_client,
        averaged,
        model_bytes: run.reports.iter().map(|r| r.ledger.model_bytes()).sum(),
        prototype_bytes: run.reports.iter().map(|r| r.ledger.prototype_bytes()).sum(),
        init_model_bytes: run.init_model_bytes,
        artifact,
        blocklog_csv,
        round_config,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_features: usize,
    pub class_names: Vec<String>,
}

/// Every strategy under every seed; strategies sharing a seed share one partition.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len() * cfg.strategies.len());
    for &seed in &cfg.seeds {
        let plan = dirichlet_partition(&data.prepared.train.labels, cfg.n_clients, cfg.delta, seed)?;
        for &strategy in &cfg.strategies {
            runs.push(run_single(cfg, &data, &plan, strategy, seed)?);
        }
    }
    Ok(ExperimentOutcome {
        runs,
        n_train: data.prepared.train.len(),
        n_test: data.prepared.test.len(),
        n_features: data.prepared.train.n_features(),
        class_names: data.prepared.train.class_names.clone(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| x.to_string())
}

pub const METRICS_HEADER: &str = "strategy,seed,mode,n_eval,evaluated,accuracy,precision,recall,f1,far,tp,tn,fp,fn,odc,aa,ap,ar,afs,model_bytes,prototype_bytes,init_model_bytes";

/// One row per run; no wall-clock values, so re-runs are byte-identical.
pub fn metrics_csv(outcome: &ExperimentOutcome, mode: LabelMode) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    let mode = match mode {
        LabelMode::Binary => "binary",
        LabelMode::Multi => "multi",
    };
    for r in &outcome.runs {
        let e = &r.evaluation;
        let m = &e.binary_metrics;
        let a = &r.averaged;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.strategy,
            r.seed,
            mode,
            e.n_records,
            if r.evaluated_global_model { "global" } else { "personal" },
            e.accuracy,
            opt(m.precision),
            opt(m.recall),
            opt(m.f1),
            opt(m.far),
            e.binary.tp,
            e.binary.tn,
            e.binary.fp,
            e.binary.fn_,
            e.odc,
            opt(a.aa),
            opt(a.ap),
            opt(a.ar),
            opt(a.afs),
            r.model_bytes,
            r.prototype_bytes,
            r.init_model_bytes,
        );
    }
    s
}

pub const ROUNDS_HEADER: &str =
    "strategy,seed,round,participants,mean_local_loss,objective,test_accuracy,model_bytes,prototype_bytes,global_model";

/// Per-round curves for plotting.
pub fn rounds_csv(outcome: &ExperimentOutcome) -> String {
    let mut s = String::from(ROUNDS_HEADER);
    s.push('\n');
    for r in &outcome.runs {
        for q in &r.rounds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.strategy,
                r.seed,
                q.round,
                q.participants.len(),
                q.mean_local_loss,
                q.objective,
                opt(q.test_accuracy),
                q.ledger.model_bytes(),
                q.ledger.prototype_bytes(),
                q.global_model_present,
            );
        }
    }
    s
}

/// Mean and sample standard deviation; the deviation is absent for one value.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Per-strategy mean ± sample std over seeds.
pub fn summary_csv(outcome: &ExperimentOutcome, strategies: &[Strategy]) -> String {
    type Pick = fn(&RunResult) -> Option<f64>;
    let cols: [(&str, Pick); 6] = [
        ("accuracy", |r| Some(r.evaluation.accuracy)),
        ("precision", |r| r.evaluation.binary_metrics.precision),
        ("recall", |r| r.evaluation.binary_metrics.recall),
        ("f1", |r| r.evaluation.binary_metrics.f1),
        ("far", |r| r.evaluation.binary_metrics.far),
        ("odc", |r| Some(r.evaluation.odc as f64)),
    ];
    let mut s = String::from("strategy,n_seeds");
    for (name, _) in &cols {
        let _ = write!(s, ",{name}_mean,{name}_std");
    }
    s.push('\n');
    for &strategy in strategies {
        let runs: Vec<&RunResult> = outcome.runs.iter().filter(|r| r.strategy == strategy).collect();
        let _ = write!(s, "{},{}", strategy, runs.len());
        for (_, pick) in &cols {
            let vals: Vec<f64> = runs.iter().filter_map(|r| pick(r)).collect();
            let (m, sd) = if vals.len() == runs.len() { mean_std(&vals) } else { (None, None) };
            let _ = write!(s, ",{},{}", opt(m), opt(sd));
        }
        s.push('\n');
    }
    s
}

fn report_text(cfg: &ExperimentConfig, outcome: &ExperimentOutcome, elapsed_s: f64, config_echo: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "efpkd experiment report");
    let _ = writeln!(
        s,
        "dataset {} | mode {:?} | clients {} | delta {} | train {} | test {} | features {}",
        cfg.dataset, cfg.mode, cfg.n_clients, cfg.delta, outcome.n_train, outcome.n_test, outcome.n_features
    );
    let _ = writeln!(s, "classes: {}", outcome.class_names.join(", "));
    let _ = writeln!(s, "wall-clock: {elapsed_s:.1} s\n");
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8} {:>12} {:>12}",
        "strategy", "seed", "accuracy", "precision", "recall", "f1", "far", "odc", "model_B", "proto_B"
    );
    let f = |v: Option<f64>| v.map_or_else(|| ABSENT.to_string(), |x| format!("{x:.4}"));
    for r in &outcome.runs {
        let m = &r.evaluation.binary_metrics;
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8} {:>12} {:>12}",
            r.strategy.to_string(),
            r.seed,
            format!("{:.4}", r.evaluation.accuracy),
            f(m.precision),
            f(m.recall),
            f(m.f1),
            f(m.far),
            r.evaluation.odc,
            r.model_bytes,
            r.prototype_bytes
        );
    }
    let _ = writeln!(s, "\naveraged over participating clients (personal models)");
    let _ = writeln!(s, "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9}", "strategy", "seed", "AA", "AP", "AR", "AFS");
    for r in &outcome.runs {
        let a = &r.averaged;
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9}",
            r.strategy.to_string(),
            r.seed,
            f(a.aa),
            f(a.ap),
            f(a.ar),
            f(a.afs)
        );
    }
    let _ = writeln!(s, "\nper-round loss traces are in rounds.csv\n\nconfig:\n{config_echo}");
    s
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, body).map_err(|e| ExperimentError::Report {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Runs the sweep and writes `report.txt`, `metrics.csv`, `rounds.csv`,
/// `summary.csv`, `config.toml` and per-run `blocklog.csv`/`model.bin`/`model.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let start = Instant::now();
    let outcome = run_sweep(cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_reports(cfg, &outcome, elapsed)?;
    Ok(outcome)
}

pub fn run_dir(out_dir: &Path, strategy: Strategy, seed: u64) -> PathBuf {
    out_dir.join(format!("{strategy}-seed{seed}"))
}

pub fn write_reports(cfg: &ExperimentConfig, outcome: &ExperimentOutcome, elapsed_s: f64) -> Result<(), ExperimentError> {
    let out = &cfg.out_dir;
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| ExperimentError::Report {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    };
    mkdir(out)?;
    let echo = cfg.to_toml_string()?;
    write_file(&out.join("config.toml"), &echo)?;
    write_file(&out.join("metrics.csv"), metrics_csv(outcome, cfg.mode))?;
    write_file(&out.join("rounds.csv"), rounds_csv(outcome))?;
    write_file(&out.join("summary.csv"), summary_csv(outcome, &cfg.strategies))?;
    write_file(&out.join("report.txt"), report_text(cfg, outcome, elapsed_s, &echo))?;
    for r in &outcome.runs {
        let dir = run_dir(out, r.strategy, r.seed);
        mkdir(&dir)?;
        if let Some(log) = &r.blocklog_csv {
            write_file(&dir.join("blocklog.csv"), log)?;
        }
        if let Some(a) = &r.artifact {
            a.save(&dir.join("model.bin"))?;
        }
    }
    Ok(())
}
