use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use cellfree_ep::harness::{run_experiment, write_outputs, Algorithm, ExperimentConfig};
use clap::Parser;

/// Monte Carlo link-level simulation of semi-blind joint channel estimation
/// and detection in a cell-free massive MIMO uplink.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// JSON experiment configuration; unspecified fields take desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluate a single receiver instead of the configured set.
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algorithm>,
    /// Data symbols per coherence block.
    #[arg(long = "T", value_name = "T")]
    data_len: Option<usize>,
    /// EP iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Damping weight on the new message, in [0, 1].
    #[arg(long)]
    eta: Option<f64>,
    /// Number of UE position draws.
    #[arg(long)]
    positions: Option<usize>,
    /// Fading realizations per position.
    #[arg(long)]
    fadings: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn parse_algo(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: cellfree_ep::Error| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(a) = cli.algo {
        cfg.algorithms = vec![a];
    }
    if let Some(t) = cli.data_len {
        cfg.data_len = t;
    }
    if let Some(i) = cli.iters {
        cfg.iterations = i;
    }
    if let Some(e) = cli.eta {
        cfg.eta = e;
    }
    if let Some(p) = cli.positions {
        cfg.positions = p;
    }
    if let Some(f) = cli.fadings {
        cfg.fadings = f;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().context("invalid configuration")?;

    let report = run_experiment(&cfg).context("experiment failed")?;
    write_outputs(&report, &cli.out).with_context(|| format!("writing results to {}", cli.out.display()))?;
    for a in &report.summary.algorithms {
        let med = |m: &Option<cellfree_ep::harness::MetricSummary>| {
            m.as_ref().map_or_else(|| "-".to_string(), |s| format!("{:.4e}", s.median))
        };
        println!("{:<15} median SER {:>11}  median NMSE {:>11}", a.algo.name(), med(&a.ser), med(&a.nmse));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
