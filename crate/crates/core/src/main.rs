use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use recbias::dataset::{FilterMode, ZeroPolicy};
use recbias::enrichment::EnrichConfig;
use recbias::experiment::{
    cmd_enrich, cmd_prepare, cmd_report, cmd_run, cmd_synth, ExitStatus, ExperimentConfig,
    FilterConfig, PrepareArgs,
};
use recbias::synth::GenerativeConfig;
use recbias::{Error, Result};

/// Measure and mitigate author-gender rating bias in recommenders.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Overrides the seed of `run` and `synth` configs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use only the enrichment cache and fixtures.
    #[arg(long, global = true)]
    offline: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label items by author gender, writing catalog.csv and drops.csv.
    Enrich(EnrichArgs),
    /// Load and activity-filter a ratings file.
    Prepare(PrepareCli),
    /// Generate a synthetic dataset with known bias.
    Synth {
        /// TOML generator settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run every configured algorithm and mode.
    Run {
        /// TOML experiment file.
        config: PathBuf,
    },
    /// Build comparison tables from a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Args, Debug)]
struct EnrichArgs {
    /// Ratings file (`user,item,rating`) or a one-column ISBN list.
    #[arg(long)]
    input: PathBuf,
    /// TOML provider settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixture record files, consulted before any HTTP provider.
    #[arg(long = "fixture")]
    fixtures: Vec<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args, Debug)]
struct PrepareCli {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    scale_max: f64,
    /// `drop` or `reject`.
    #[arg(long, default_value = "drop", value_parser = kebab::<ZeroPolicy>)]
    zero_policy: ZeroPolicy,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long, default_value_t = 1)]
    min_item_ratings: usize,
    #[arg(long, default_value_t = 1)]
    min_user_ratings: usize,
    /// `sequential` or `fixpoint`.
    #[arg(long, default_value = "sequential", value_parser = kebab::<FilterMode>)]
    filter_mode: FilterMode,
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<ExitStatus> {
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match cli.command {
        Command::Enrich(a) => {
            let mut cfg: EnrichConfig = match &a.config {
                Some(p) => read_toml(p)?,
                None => EnrichConfig::default(),
            };
            cfg.fixtures.extend(a.fixtures);
            if a.cache.is_some() {
                cfg.cache = a.cache;
            }
            if let Some(t) = a.threshold {
                cfg.threshold = t;
            }
            cfg.offline |= cli.offline;
            let dir = out("enriched");
            let s = cmd_enrich(&a.input, a.delimiter, &cfg, &dir)?;
            eprintln!(
                "{}: {} labelled, {} dropped",
                dir.display(),
                s.catalog.len(),
                s.drops.len()
            );
            if s.status == ExitStatus::Failure {
                log::warn!("every item was dropped");
            }
            Ok(s.status)
        }
        Command::Prepare(p) => {
            let args = PrepareArgs {
                ratings: p.ratings,
                catalog: p.catalog,
                scale_max: p.scale_max,
                zero_policy: p.zero_policy,
                delimiter: p.delimiter,
                filter: FilterConfig {
                    min_item_ratings: p.min_item_ratings,
                    min_user_ratings: p.min_user_ratings,
                    mode: p.filter_mode,
                },
                out: out("prepared"),
            };
            cmd_prepare(&args)?;
            Ok(ExitStatus::Success)
        }
        Command::Synth { config } => {
            let mut cfg: GenerativeConfig = match &config {
                Some(p) => read_toml(p)?,
                None => GenerativeConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let dir = out("synthetic");
            let data = cmd_synth(&cfg, &dir)?;
            eprintln!("{}: {} ratings", dir.display(), data.dataset.n_ratings());
            Ok(ExitStatus::Success)
        }
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let s = cmd_run(&cfg, cli.out.as_deref())?;
            eprintln!("{}: {}", s.dir.display(), s.manifest.status);
            Ok(s.status)
        }
        Command::Report { run_dir } => {
            let s = cmd_report(&run_dir)?;
            for (algo, mode) in &s.missing {
                eprintln!("missing cell {algo}/{}", mode.name());
            }
            Ok(s.status)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitStatus::Failure.code() as u8)
        }
    }
}
