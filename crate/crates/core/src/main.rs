use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use gapdp::harness::{
    emit, emit_to_path, parse_eps_list, parse_k_range, run_experiment, Experiment, ExperimentConfig, Format,
    NoiseChoice,
};
use gapdp::queries::{QuerySource, SyntheticSpec};
use gapdp::Error;

/// Free-gap selection experiments.
#[derive(Debug, Parser)]
#[command(name = "gapdp", version)]
struct Cli {
    /// mse-reduction-svt, mse-reduction-topk, adaptive-counts,
    /// precision-fmeasure, remaining-budget or audit
    experiment: String,

    /// Transaction file, one record of whitespace-separated item ids per line
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    dataset: Option<PathBuf>,

    /// zipf:N:SCALE, linear:N:TOP:STEP or constant:N:VALUE
    #[arg(long)]
    synthetic: Option<String>,

    /// Privacy budget, or a comma list of budgets
    #[arg(long, default_value = "0.7")]
    eps: String,

    /// N, N..M or a comma list
    #[arg(long, default_value = "10")]
    k: String,

    #[arg(long, default_value_t = 10_000)]
    trials: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// laplace, exp or geo
    #[arg(long, default_value = "laplace")]
    noise: String,

    /// Treat the queries as non-monotonic (doubles the query noise)
    #[arg(long)]
    non_monotonic: bool,

    /// Threshold share of the SVT budget
    #[arg(long)]
    theta: Option<f64>,

    /// Output file; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,

    /// csv or json
    #[arg(long, default_value = "csv")]
    format: String,
}

fn config(cli: &Cli) -> gapdp::Result<(ExperimentConfig, Format)> {
    let experiment: Experiment = cli.experiment.parse()?;
    let source = match (&cli.dataset, &cli.synthetic) {
        (Some(path), _) => QuerySource::Dataset(path.clone()),
        (None, Some(spec)) => QuerySource::Synthetic(spec.parse::<SyntheticSpec>()?),
        (None, None) => return Err(Error::InvalidParameter("--dataset or --synthetic is required".into())),
    };
    let mut cfg = ExperimentConfig::new(experiment, source);
    cfg.epsilons = parse_eps_list(&cli.eps)?;
    cfg.ks = parse_k_range(&cli.k)?;
    cfg.trials = cli.trials;
    cfg.seed = cli.seed;
    cfg.noise = cli.noise.parse::<NoiseChoice>()?;
    cfg.monotonic = !cli.non_monotonic;
    cfg.theta = cli.theta;
    cfg.validate()?;
    Ok((cfg, cli.format.parse()?))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) | Error::NoQualifiedBins => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let (cfg, format) = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gapdp: {e}");
            return ExitCode::from(1);
        }
    };
    let result = run_experiment(&cfg).and_then(|rows| match &cli.out {
        Some(path) => emit_to_path(&rows, format, path),
        None => emit(&rows, format, std::io::stdout().lock()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gapdp: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
