//! `adh`: run calibration experiments from a JSON config plus flag
//! overrides. Exit codes: 0 ok, 2 config error, 3 runtime failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use adh_cli::config::{validate_config, ExperimentSpec, CONFIG_VERSION};
use adh_cli::runner::{run, RunError, RunSummary};

#[derive(Parser, Debug)]
#[command(
    name = "adh",
    version,
    about = "Double-head calibration training experiments",
    long_about = "Runs one experiment per invocation: train, beta_sweep, k_sweep, shift_auroc, \
                  theorem1, theorem2, or gradcheck. Configuration comes from an optional JSON \
                  file (--config) with every field defaulted; flags override individual fields."
)]
struct Args {
    /// Experiment kind (same values as --experiment).
    #[arg(value_name = "EXPERIMENT")]
    kind: Option<String>,
    /// JSON config file; all defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Experiment kind: train, beta_sweep, k_sweep, shift_auroc, theorem1,
    /// theorem2, gradcheck.
    #[arg(long)]
    experiment: Option<String>,
    /// Top-level seed; every randomized component derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<String>,
    /// Annealing start factor.
    #[arg(long)]
    beta0: Option<f64>,
    /// Calibration interleave period k.
    #[arg(long)]
    calib_period: Option<usize>,
    /// Main-head learning rate.
    #[arg(long)]
    lr_main: Option<f64>,
    /// Calibration-head learning rate (default: 100x the main rate).
    #[arg(long)]
    lr_calib: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Reliability bins for reported metrics.
    #[arg(long)]
    bins: Option<usize>,
    /// Main-head loss: ce, brier, focal, or adh.
    #[arg(long, value_name = "LOSS")]
    loss_main: Option<String>,
}

fn apply_overrides(spec: &mut ExperimentSpec, args: &Args) -> Result<(), RunError> {
    let kind_str = match (&args.kind, &args.experiment) {
        (Some(a), Some(b)) if a != b => {
            return Err(RunError::Config(vec![format!(
                "experiment given twice with different values: {a:?} vs {b:?}"
            )]));
        }
        (Some(a), _) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };
    if let Some(s) = kind_str {
        spec.experiment = s.parse().map_err(|e: String| RunError::Config(vec![e]))?;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        spec.out_dir = dir.clone();
    }
    if let Some(beta0) = args.beta0 {
        spec.train.beta0 = beta0;
    }
    if let Some(k) = args.calib_period {
        spec.train.calib_period = k;
    }
    if let Some(lr) = args.lr_main {
        spec.train.lr_main = lr;
    }
    if let Some(lr) = args.lr_calib {
        spec.train.lr_calib = Some(lr);
    }
    if let Some(epochs) = args.epochs {
        spec.train.epochs = epochs;
    }
    if let Some(bins) = args.bins {
        spec.train.bins = bins;
    }
    if let Some(loss) = &args.loss_main {
        spec.train.loss.kind = loss.clone();
    }
    Ok(())
}

fn real_main(args: &Args) -> Result<RunSummary, RunError> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| RunError::Config(vec![format!("read {}: {e}", path.display())]))?,
        None => format!("{{\"version\": {CONFIG_VERSION}}}"),
    };
    let mut spec = validate_config(&text).map_err(RunError::Config)?;
    apply_overrides(&mut spec, args)?;
    run(&spec)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match real_main(&args) {
        Ok(summary) => {
            println!("experiment {} complete", summary.experiment);
            for file in &summary.files {
                println!("wrote {}", summary.out_dir.join(file).display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
