//! The `cok` pipeline: subcommands over a work directory, with a flat config
//! file, derived per-stage seeds and a run manifest.

pub mod config;
pub mod manifest;
mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{stage_seed, Config};
pub use manifest::{RunManifest, StageRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("client: {0}")]
    Client(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Client(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "cok", version, about = "Mine compositional rules and build chain-of-knowledge datasets")]
pub struct Cli {
    /// Directory holding every artifact of the run.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Anonymized,
    Regular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    Kg,
    Probe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolisherArg {
    Mock,
    Live,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExploreMode {
    /// Training traces for the selected pool.
    Synthesize,
    /// Answer the questions of a samples file.
    Answer,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic knowledge graph as TSV.
    Synth {
        #[arg(long, default_value_t = 5000)]
        triples: usize,
        #[arg(long, default_value_t = 0.15)]
        noise: f64,
        /// Output path (default: <workdir>/kg.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a TSV knowledge graph into the store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
    },
    /// Print store statistics.
    Stats,
    /// Mine and filter two-hop rules.
    Mine {
        #[arg(long)]
        min_support: Option<u64>,
        #[arg(long)]
        min_confidence: Option<String>,
    },
    /// Compose longer rules from the two-hop library.
    Compose {
        #[arg(long)]
        max_hop: Option<usize>,
        #[arg(long)]
        composed_min_support: Option<u64>,
    },
    /// Select balanced, leakage-free rule instances.
    Select {
        #[arg(long, value_enum)]
        setting: Option<SettingArg>,
        #[arg(long)]
        per_rule: Option<usize>,
        /// Fact oracle for the regular-setting probe filter.
        #[arg(long, value_enum)]
        oracle: Option<OracleArg>,
        /// Known facts for the mock probe client, one `head<TAB>relation<TAB>tail` per line.
        #[arg(long)]
        probe_table: Option<PathBuf>,
    },
    /// Render questions and chain-of-knowledge answers.
    Generate {
        #[arg(long, value_enum)]
        polisher: Option<PolisherArg>,
        /// Also write the knowledge corpus.
        #[arg(long)]
        corpus: bool,
    },
    /// Run the trial-and-error agent.
    Explore {
        #[arg(long, value_enum, default_value = "synthesize")]
        mode: ExploreMode,
        /// 0 means the number of candidate rules.
        #[arg(long)]
        max_trials: Option<usize>,
        #[arg(long, value_enum, default_value = "kg")]
        oracle: OracleArg,
        #[arg(long)]
        probe_table: Option<PathBuf>,
        /// Samples to answer in answer mode (default: test.jsonl).
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Split samples into training and test sets by rule.
    Split {
        /// Samples file in the workdir (default: samples.jsonl).
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        train_rule_fraction: Option<f64>,
        #[arg(long)]
        id_holdout: Option<f64>,
    },
    /// Score predictions against the test set.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Truncate each bucket to this many samples (0: no limit).
        #[arg(long)]
        bucket_size: Option<usize>,
    },
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    cfg.set_opt("seed", cli.seed)?;
    cfg.set_opt("workers", cli.workers)?;
    std::fs::create_dir_all(&cli.workdir)
        .map_err(|e| CliError::Data(format!("{}: {e}", cli.workdir.display())))?;
    stages::dispatch(&cli.workdir, cfg, cli.command)
}
