//! `intent` — orchestration binary for the two-stage intent prediction
//! pipeline. Every subcommand reads one JSON run config and writes its
//! artifacts under `<output_dir>/<run_id>/`.

mod config;
mod errors;
mod fixtures;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use errors::CliError;
use pipeline::{boot_mock, override_endpoints, run_e2e, run_pipeline, Stage};

#[derive(Parser)]
#[command(
    name = "intent",
    version,
    about = "Two-stage live-chat intent prediction: classify browsing sessions, generate intent candidates, judge them"
)]
struct Cli {
    /// Run-config JSON; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the generation and model seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Point both gateways at this endpoint instead of the configured ones.
    #[arg(long, global = true)]
    endpoint_override: Option<String>,
    /// Boot the scripted mock from this fixture and run against it.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic labeled corpus and split it.
    Synth,
    /// Build the vocabulary and train the classifier.
    Train,
    /// Evaluate the classifier (and optional text-to-text baseline) on the test split.
    ClassifyEval,
    /// Generate intent candidates for test users through the gateway.
    Generate,
    /// Judge candidates against true intents.
    Judge,
    /// Assemble the JSON + Markdown report.
    Report,
    /// Offline end-to-end run against the shipped mock fixture, compared
    /// byte-for-byte against the golden report.
    E2e {
        /// Regenerate the fixture, human labels, and golden report.
        #[arg(long)]
        update_golden: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.gen.seed = seed;
        cfg.model.seed = seed;
    }
    if let Some(fixture) = cli.mock.clone() {
        cfg.paths.fixtures = Some(fixture);
    }
    if let Some(endpoint) = &cli.endpoint_override {
        override_endpoints(&mut cfg, endpoint);
    }

    let single = |cfg: &RunConfig, stage: Stage| -> Result<(), CliError> {
        // --mock boots a scripted server for just this invocation.
        if cli.mock.is_some() {
            let mock = boot_mock(cfg)?;
            let mut effective = cfg.clone();
            override_endpoints(&mut effective, &mock.url());
            let result = run_pipeline(&effective, &[stage]);
            mock.save_transcript(cfg.transcript_path())
                .map_err(|e| CliError::Other(format!("transcript: {e}")))?;
            mock.shutdown();
            result
        } else {
            run_pipeline(cfg, &[stage])
        }
    };

    match cli.command {
        Cmd::Synth => single(&cfg, Stage::Synth),
        Cmd::Train => single(&cfg, Stage::Train),
        Cmd::ClassifyEval => single(&cfg, Stage::ClassifyEval),
        Cmd::Generate => single(&cfg, Stage::Generate),
        Cmd::Judge => single(&cfg, Stage::Judge),
        Cmd::Report => single(&cfg, Stage::Report),
        Cmd::E2e { update_golden } => run_e2e(&cfg, update_golden),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
