use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use efpkd::experiment::{run_experiment, ExperimentConfig, ExperimentError};
use efpkd::fl::Strategy;
use efpkd::intervention::{run_application_stage, ModelArtifact};
use efpkd::nn::LabelMode;

#[derive(Parser, Debug)]
#[command(name = "efpkd", version, about = "Federated intrusion-detection experiments")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify new traffic with a saved model and write the block log.
    Detect(DetectArgs),
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// `model.bin` written by a training run; `model.json` must sit beside it.
    #[arg(long)]
    model: PathBuf,
    /// CSV in the training profile's layout; the label column is optional.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "blocklog.csv")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Dataset {
    NslKdd,
    UnswNb15,
    Iotid20,
    Synthetic,
    Generic,
}

impl Dataset {
    fn name(self) -> &'static str {
        match self {
            Dataset::NslKdd => "nsl-kdd",
            Dataset::UnswNb15 => "unsw-nb15",
            Dataset::Iotid20 => "iotid20",
            Dataset::Synthetic => "synthetic",
            Dataset::Generic => "generic",
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    Binary,
    Multi,
}

/// Flags override values from `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<Dataset>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategy: Option<Vec<Strategy>>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long = "avail-p")]
    avail_p: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subsample to 10k/2k rows and use the reduced teacher widths.
    #[arg(long = "desk-scale")]
    desk_scale: bool,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
        format!("unknown strategy `{s}` (expected one of {})", names.join(", "))
    })
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = args.dataset {
        cfg.dataset = d.name().to_string();
    }
    if let Some(p) = &args.train {
        cfg.train_path = Some(p.clone());
    }
    if let Some(p) = &args.test {
        cfg.test_path = Some(p.clone());
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            Mode::Binary => LabelMode::Binary,
            Mode::Multi => LabelMode::Multi,
        };
    }
    if let Some(s) = &args.strategy {
        cfg.strategies = s.clone();
    }
    if let Some(n) = args.clients {
        cfg.n_clients = n;
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(q) = args.rounds {
        cfg.set_round("rounds", q as i64);
    }
    if let Some(s) = &args.seed {
        cfg.seeds = s.clone();
    }
    if let Some(k) = args.topk {
        cfg.top_k = Some(k);
    }
    if let Some(p) = args.avail_p {
        cfg.set_round("availability_probability", p);
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if args.desk_scale {
        cfg.desk_scale = true;
    }
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<(), ExperimentError> {
    let cfg = build_config(args)?;
    let outcome = run_experiment(&cfg)?;
    for r in &outcome.runs {
        println!(
            "{:<16} seed {:<4} accuracy {:.4} odc {}/{}",
            r.strategy.to_string(),
            r.seed,
            r.evaluation.accuracy,
            r.evaluation.odc,
            r.evaluation.n_records
        );
    }
    println!("reports written to {}", cfg.out_dir.display());
    Ok(())
}

fn detect(args: &DetectArgs) -> Result<(), String> {
    let artifact = ModelArtifact::load(&args.model).map_err(|e| e.to_string())?;
    let outcome = run_application_stage(&artifact, &args.input).map_err(|e| e.to_string())?;
    let f = File::create(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    outcome
        .log
        .write_csv(BufWriter::new(f), artifact.class_names())
        .map_err(|e| format!("{}: {e}", args.out.display()))?;
    println!("blocked {} passed {} of {}", outcome.log.blocked, outcome.log.passed, outcome.log.len());
    match &outcome.evaluation {
        Some(e) => println!("accuracy {:.4} odc {}/{}", e.accuracy, e.odc, e.n_records),
        None => println!("no ground truth: metrics unavailable"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Some(Command::Detect(a)) => match detect(a) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error [application]: {e}");
                ExitCode::FAILURE
            }
        },
        None => match run(&cli.run) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error [{}]: {e}", e.stage());
                ExitCode::FAILURE
            }
        },
    }
}
