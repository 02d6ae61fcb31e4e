//! `lhs`: operator entry point. Every command is a thin wrapper over a
//! library call; secrets come from environment variables only.

mod commands;
mod error;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
#[derive(Debug, Parser)]
#[command(name = "lhs", version, about = "Learning health system backbone")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "LHS_DATA_DIR", default_value = "lhs-data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Output {
    /// Output format for scripting.
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct EhrArgs {
    /// EHR exchange directory (`outbound/<week>/`, `inbound/`).
    #[arg(long)]
    pub ehr_dir: Option<PathBuf>,
    /// EHR endpoint speaking MLLP, as host:port.
    #[arg(long)]
    pub ehr_addr: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service and pipeline workers.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic cohort with planted ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Submit a directory of envelopes (and roster files) to the gateway.
    Ingest {
        #[arg(long)]
        dir: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Drive and inspect the processing pipeline.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// HL7 v2 message tools.
    #[command(subcommand)]
    Hl7(Hl7Command),
    /// Score an instrument from its item vector.
    Score {
        /// FSS, HADS, BDI2, ESS, FSMC, SUS or ARAT.
        instrument: String,
        /// Comma-separated integer items.
        #[arg(long, allow_hyphen_values = true)]
        items: String,
        #[command(flatten)]
        output: Output,
    },
    /// Pull a week of results from the EHR and import them.
    ExtractWeekly {
        /// ISO week, e.g. 2025-W03.
        #[arg(long)]
        week: String,
        #[command(flatten)]
        ehr: EhrArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Send one ORU^R01 per patient with new results for a clinic-local day.
    ReturnDaily {
        #[arg(long)]
        date: chrono::NaiveDate,
        #[command(flatten)]
        ehr: EhrArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Export observations.
    Export {
        /// all, patient:<id>, metric:<code>, cohort:<tag> or week:<YYYY-Www>.
        #[arg(long, default_value = "all")]
        scope: String,
        /// csv or ndjson.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Destination file; `-` writes to stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Manage the relay key file named by `LHS_KEY_FILE`.
    #[command(subcommand)]
    Keys(KeysCommand),
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Seal, relay and process every captured record, then report.
    Run {
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Records sealed per round.
        #[arg(long, default_value_t = 25)]
        batch: usize,
        /// Failure drill: fail each stage attempt with this probability.
        #[arg(long)]
        inject_failure_rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        fault_seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Job counts and success rate.
    Report {
        /// all, or a trailing window such as 24h or 7d.
        #[arg(long)]
        window: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Requeue dead-lettered jobs.
    RedriveDeadletter {
        #[command(flatten)]
        output: Output,
    },
    /// Dead-letter queue as CSV.
    DeadLetters {
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum Hl7Command {
    /// Parse an ER7 file (raw, or MLLP frames).
    Parse {
        file: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Build the day's ORU^R01 for a patient from stored results.
    BuildOru {
        #[arg(long)]
        patient: String,
        #[arg(long)]
        date: chrono::NaiveDate,
        /// Write raw ER7 here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Subcommand)]
pub enum KeysCommand {
    /// Create a new key file; refuses to overwrite.
    Init,
    /// Add a key and make it active; older keys stay for decryption.
    Rotate,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("LHS_LOG").unwrap_or_else(|_| {
        tracing_subscriber::EnvFilter::new(if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" })
    });
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
