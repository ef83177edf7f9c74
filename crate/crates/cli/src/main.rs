mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Failure classes mapped to exit codes: 1 for bad flags, config or inputs,
/// 2 for failures while running.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(noble_core::Error),
}

impl From<noble_core::Error> for CliError {
    fn from(e: noble_core::Error) -> Self {
        use noble_core::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::InvalidGrid(_)
            | E::MissingFile(_)
            | E::Format { .. }
            | E::UnknownStartLocation { .. }
            | E::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "noble", version, about = "Structure-aware Wi-Fi and IMU localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Ujiindoorloc,
    Ipin2016,
    SyntheticWifi,
    SyntheticImu,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Wifi,
    Imu,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Regression,
    Projection,
    Isomap,
    Lle,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a dataset (or generate a synthetic one) into a corpus directory.
    Ingest {
        /// Source format.
        #[arg(long, value_enum)]
        dataset: DatasetKind,
        /// UJIIndoorLoc: directory holding trainingData.csv and
        /// validationData.csv. IPIN2016: the CSV file. Unused for synthetic data.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        /// Seed for synthetic generation and the IPIN2016 test split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synthetic Wi-Fi: number of samples.
        #[arg(long, default_value_t = 3000)]
        samples: usize,
        /// Synthetic Wi-Fi: RSSI noise standard deviation in dBm.
        #[arg(long, default_value_t = 4.0)]
        noise_dbm: f64,
        /// Synthetic IMU: number of paths.
        #[arg(long, default_value_t = 1500)]
        paths: usize,
    },
    /// Train a model and write it to a model directory.
    Train {
        #[arg(long, value_enum)]
        task: Task,
        /// Corpus directory produced by `ingest`.
        #[arg(long)]
        data: PathBuf,
        /// Experiment config (flat key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on the test split and write metrics.json.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        /// Model directory produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write scatter.csv and scatter.svg.
        #[arg(long)]
        emit_scatter: bool,
    },
    /// Train and evaluate a comparison model.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        /// Corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Experiment config (flat key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sigmoid-rewrite sweep and the same-class closeness check.
    CheckTheory {
        /// Wi-Fi model directory; the fine head is analysed. Without it a
        /// classifier is trained on two Gaussian blobs.
        #[arg(long, requires = "data")]
        model: Option<PathBuf>,
        /// Corpus directory whose test split is embedded.
        #[arg(long, requires = "model")]
        data: Option<PathBuf>,
        /// Closeness threshold; defaults to the smallest value admitting every sample.
        #[arg(long)]
        lambda: Option<f64>,
        /// Seed for the random sweep and the toy classifier.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the cell map of a corpus and report class counts and occupancy.
    Quantize {
        /// Corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Fine cell side in meters.
        #[arg(long)]
        tau: f64,
        /// Coarse cell side in meters.
        #[arg(long)]
        coarse: Option<f64>,
        /// Cell map output file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("NOBLE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("NOBLE_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage("NOBLE_THREADS must be a positive integer".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("NOBLE_THREADS: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
