use std::path::PathBuf;
use std::process::ExitCode;

use backvis::experiments::{resolve_out_dir, run, ExperimentConfig, ExperimentId};
use clap::Parser;

/// Runs one visualization experiment and writes images, metrics.csv and
/// manifest.txt to the output directory.
#[derive(Parser, Debug)]
#[command(name = "backvis", version, about)]
struct Args {
    /// Experiment id: cnn-vs-fcn, filters-sweep, maxpool, depth, l2-stats, fgsm, splice, edge-detector.
    experiment: ExperimentId,

    /// Line-oriented `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Output directory. Falls back to the config's `output` key, then
    /// $BACKVIS_OUT, then ./backvis-out.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run a single seed instead of the configured list.
    #[arg(long, value_name = "K")]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("backvis: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(args: &Args) -> backvis::Result<()> {
    let mut cfg = ExperimentConfig::load(args.experiment, &args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let dir = resolve_out_dir(args.out.as_deref(), &cfg);
    let out = run(&cfg, &dir)?;
    println!("{}: {} files in {}", cfg.experiment, out.files.len(), dir.display());
    for row in out.rows.iter().filter(|r| r.seed.is_none()) {
        let method = row.method.map_or("-".to_string(), |m| m.to_string());
        println!("  {:<40} {:<10} {:.6}", row.metric, method, row.value);
    }
    Ok(())
}
