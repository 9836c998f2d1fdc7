//! `locodec` command-line interface.

mod commands;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "locodec", version, about = "Decode locomotion speed from multichannel EEG sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that reads a run config.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run config with dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 gives a fully serial run. Defaults to the physical core count.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, env = "LOCODEC_SEED")]
    pub seed: Option<u64>,
}

/// Flags selecting one experiment cell.
#[derive(Args, Debug, Clone, Default)]
pub struct PlanFlags {
    /// single_80, single_10, zeroshot_cross_session, zeroshot_cross_subject,
    /// finetune_cross_session or finetune_cross_subject.
    #[arg(long)]
    pub strategy: Option<String>,
    /// fullband, delta, theta, alpha, beta or gamma.
    #[arg(long)]
    pub band: Option<String>,
    /// `all`, a region, or two regions joined by `+`.
    #[arg(long)]
    pub regions: Option<String>,
    /// Target shift in ms; positive decodes future speed.
    #[arg(long, allow_hyphen_values = true)]
    pub offset_ms: Option<i64>,
    /// Fixed speed-IQR inclusion threshold (default: 10th percentile).
    #[arg(long)]
    pub iqr_threshold: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert session files to canonical form and apply the inclusion gate.
    Ingest {
        /// Session files to read.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Input format: csv, bin or auto (by extension).
        #[arg(long, default_value = "auto")]
        format: String,
        /// Fixed speed-IQR inclusion threshold (default: 10th percentile).
        #[arg(long)]
        iqr_threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic fleet described by the `synth` config section.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one decoder per session and save model, normalizer and training curve.
    Train {
        /// Session files (default: `data.sessions` or the synthetic fleet).
        #[arg(long)]
        session: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanFlags,
    },
    /// Score a saved model on the final 10% of a session.
    Eval {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Session file.
        #[arg(long)]
        session: PathBuf,
        /// Target shift in ms (default: the offset the model was trained at).
        #[arg(long, allow_hyphen_values = true)]
        offset_ms: Option<i64>,
        /// Write the row here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured experiment and write the results table.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanFlags,
    },
    /// Summarize a results table: medians, hypothesis tests, offset curves, spectra.
    Report {
        /// Results table written by `experiment`.
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Session files for speed-decile spectra.
        #[arg(long)]
        sessions: Vec<PathBuf>,
        /// Bootstrap seed for confidence intervals.
        #[arg(long, env = "LOCODEC_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Ingest {
            paths,
            format,
            iqr_threshold,
            common,
        } => commands::ingest(&paths, &format, iqr_threshold, &common),
        Command::Synth { common } => commands::synth(&common),
        Command::Train { session, common, plan } => commands::train(&session, &common, &plan),
        Command::Eval {
            model,
            session,
            offset_ms,
            out,
        } => commands::eval(&model, &session, offset_ms, out.as_deref()),
        Command::Experiment { common, plan } => commands::experiment(&common, &plan),
        Command::Report {
            results,
            out,
            sessions,
            seed,
        } => report::report(&results, &out, &sessions, seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
