//! `leadtime` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use leadtime::cli;
use leadtime::config::ModelKind;
use leadtime::error::Error;

#[derive(Parser)]
#[command(
    name = "leadtime",
    about = "Probabilistic lead-time regression: full predictive distributions, \
             calibration diagnostics, and isotonic recalibration",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic lead-time dataset as CSV.
    Generate {
        /// Number of rows.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of rows stretched by external interruptions.
        #[arg(long, default_value_t = 0.03)]
        contamination: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model on the train split of a dataset and persist it.
    Train {
        /// One of: ngboost-exp, ngboost-normal, pnn, svgp, qgb, linreg.
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// Schema file (`column = numeric|categorical|target|statusquo`);
        /// defaults to the synthetic-dataset schema.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Flat key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-row predictions (mean, median, quantiles) for a whole CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics report, calibration curves, and a reliability diagram on the
    /// test split shared by the given models.
    Evaluate {
        /// Repeatable: persisted model files.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Nominal central-interval level for the coverage column.
        #[arg(long, default_value_t = 0.9)]
        nominal: f64,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Fit (or refresh) the isotonic recalibration map of a saved model.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibration-curve CSV (level,empirical) on the test split.
    CalibCurve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> leadtime::Result<()> {
    match cli.command {
        Command::Generate {
            n,
            seed,
            contamination,
            out,
        } => cli::cmd_generate(n, seed, contamination, &out),
        Command::Train {
            model,
            data,
            schema,
            config,
            seed,
            out,
        } => {
            let kind: ModelKind = model.parse()?;
            cli::cmd_train(kind, &data, schema.as_deref(), config.as_deref(), seed, &out)
        }
        Command::Predict { model, data, out } => cli::cmd_predict(&model, &data, &out),
        Command::Evaluate {
            models,
            data,
            nominal,
            out_dir,
        } => cli::cmd_evaluate(&models, &data, nominal, &out_dir).map(|_| ()),
        Command::Calibrate { model, data, out } => cli::cmd_calibrate(&model, &data, &out),
        Command::CalibCurve { model, data, out } => cli::cmd_calib_curve(&model, &data, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Keep clap's help/version on stdout with success, everything
            // else is a usage error.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(Error::exit_code(&err) as u8)
        }
    }
}
