use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bdemm::bench::{run_stream, run_toy_experiment, BenchError, FlatConfig, ToyConfig};
use bdemm::selftest::run_selftest;
use bdemm::wtt::{sticky_transition_matrix, WttConfig, WttKind};
use bdemm::WeightVector;
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;

#[derive(Parser)]
#[command(name = "bdemm", version, about = "Dynamic Bayesian model ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the nonlinear toy benchmark and write report.txt, mse.csv and model_probs.csv.
    Toy {
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, default_value_t = 200)]
        particles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Forgetting exponent (forgetting operator only).
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        /// identity, constant, markov, forgetting or polya.
        #[arg(long, default_value = "forgetting")]
        wtt: String,
        #[arg(long, default_value = "toy_out")]
        out: PathBuf,
    },
    /// Run an engine over a CSV of observations.
    Stream {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn toy_wtt(name: &str, alpha: f64) -> Result<WttConfig, String> {
    let kind: WttKind = name.parse().map_err(|e: bdemm::Error| e.to_string())?;
    let cfg = match kind {
        WttKind::Identity => WttConfig::identity(),
        WttKind::Constant => WttConfig::constant(WeightVector::uniform(2)),
        WttKind::Markov => WttConfig::markov(sticky_transition_matrix(2, 0.9)),
        WttKind::Forgetting => WttConfig::forgetting(alpha),
        WttKind::PolyaUrn => WttConfig::polya_urn(vec![1, 1]),
    };
    cfg.validate(2).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn toy(runs: usize, particles: usize, seed: u64, alpha: f64, wtt: &str, out: &PathBuf) -> ExitCode {
    let wtt = match toy_wtt(wtt, alpha) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let config = ToyConfig {
        runs,
        particles,
        seed,
        wtt,
        ..ToyConfig::default()
    };
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let report = match run_toy_experiment(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NUMERIC);
        }
    };
    if let Err(e) = report.write_to(out) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return ExitCode::from(EXIT_USAGE);
    }
    print!("{}", report.summary_text());
    if report.failures().is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    }
}

fn stream(config: &PathBuf, input: &PathBuf, out: Option<&PathBuf>) -> Result<usize, BenchError> {
    let cfg = FlatConfig::from_path(config)?;
    let reader = BufReader::new(File::open(input)?);
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            let n = run_stream(&cfg, reader, &mut w)?;
            w.flush()?;
            Ok(n)
        }
        None => run_stream(&cfg, reader, io::stdout().lock()),
    }
}

fn selftest() -> ExitCode {
    let checks = run_selftest();
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Toy {
            runs,
            particles,
            seed,
            alpha,
            wtt,
            out,
        } => toy(runs, particles, seed, alpha, &wtt, &out),
        Command::Stream { config, input, out } => match stream(&config, &input, out.as_ref()) {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_USAGE })
            }
        },
        Command::Selftest => selftest(),
    }
}
