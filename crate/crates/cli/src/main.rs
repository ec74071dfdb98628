use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emocot_core::cotgen::CotMode;
use emocot_core::stats::SigmaKind;

mod commands;
mod config;
mod demo;

use commands::ExtractorKind;
use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("gradient check failed: max relative error {0:.3e} exceeds tolerance")]
    GradCheck(f64),
    #[error("refusing to overwrite input file {}", .0.display())]
    InPlace(PathBuf),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::GradCheck(_) => "grad-check",
            CliError::InPlace(_) => "in-place",
            CliError::Input(_) => "invalid-input",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "emocot",
    version,
    about = "Chain-of-thought speech emotion corpus pipeline"
)]
struct Cli {
    /// Flat TOML file of settings; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for per-record stages.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure the acoustic attributes of every utterance.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        threshold_db: Option<f64>,
    },
    /// Accumulate corpus mean and deviation per attribute.
    BuildStats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin attributes into low/medium/high levels.
    Discretize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the n-1 deviation instead of the population one.
        #[arg(long)]
        sample_sigma: bool,
    },
    /// Produce explicit or implicit chain-of-thought training text.
    GenCot {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        llm_url: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Concurrent requests to the endpoint.
        #[arg(long)]
        in_flight: Option<usize>,
    },
    /// Keep utterances whose speech and text annotations agree.
    FuseLabels {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejects: PathBuf,
        #[arg(long)]
        max_duration: Option<f64>,
    },
    /// Emit the explicit-to-implicit batch stream.
    Schedule {
        #[arg(long)]
        explicit: PathBuf,
        #[arg(long)]
        implicit: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate the composed loss on a batch and verify its gradients.
    LossCheck {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score free-form predictions against reference labels.
    Evaluate {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "rules")]
        extractor: ExtractorKind,
        #[arg(long)]
        llm_url: Option<String>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Emotion and language distribution of a fused manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a synthetic corpus and run every stage on it.
    Demo {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Explicit,
    Implicit,
}

impl From<ModeArg> for CotMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Explicit => CotMode::Explicit,
            ModeArg::Implicit => CotMode::Implicit,
        }
    }
}

fn sigma(sample: bool) -> SigmaKind {
    if sample {
        SigmaKind::Sample
    } else {
        SigmaKind::Population
    }
}

/// Folds command-line overrides into the loaded configuration.
fn effective_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    match &cli.command {
        Command::ExtractFeatures {
            threshold_db: Some(t),
            ..
        } => cfg.silence_threshold_db = *t,
        Command::GenCot {
            llm_url,
            model,
            in_flight,
            ..
        } => {
            cfg.llm_url = llm_url.clone().or(cfg.llm_url);
            cfg.llm_model = model.clone().or(cfg.llm_model);
            if let Some(n) = in_flight {
                cfg.in_flight = *n;
            }
        }
        Command::Evaluate { llm_url, model, .. } => {
            cfg.llm_url = llm_url.clone().or(cfg.llm_url);
            cfg.llm_model = model.clone().or(cfg.llm_model);
        }
        Command::FuseLabels {
            max_duration: Some(d),
            ..
        } => cfg.max_duration_s = *d,
        Command::Schedule {
            steps, batch_size, ..
        } => {
            cfg.steps = steps.or(cfg.steps);
            if let Some(b) = batch_size {
                cfg.batch_size = *b;
            }
        }
        Command::LossCheck { tau: Some(t), .. } => cfg.temperature = *t,
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = effective_config(&cli)?;
    for line in cfg.to_toml().lines() {
        eprintln!("config: {line}");
    }
    match cli.command {
        Command::ExtractFeatures { manifest, out, .. } => {
            commands::extract_features(&manifest, &out, &cfg)
        }
        Command::BuildStats { manifest, out } => commands::build_stats(&manifest, &out),
        Command::Discretize {
            manifest,
            stats,
            out,
            sample_sigma,
        } => commands::discretize(&manifest, &stats, &out, sigma(sample_sigma)),
        Command::GenCot {
            manifest,
            mode,
            out,
            ..
        } => commands::gen_cot(&manifest, mode.into(), &out, &cfg),
        Command::FuseLabels {
            manifest,
            map,
            out,
            rejects,
            ..
        } => commands::fuse_labels(
            &commands::FuseArgs {
                manifest: &manifest,
                map: map.as_deref(),
                out: &out,
                rejects: &rejects,
            },
            &cfg,
        ),
        Command::Schedule {
            explicit,
            implicit,
            seed,
            out,
            ..
        } => {
            let Some(steps) = cfg.steps else {
                return Err(emocot_core::Error::Config(
                    "the number of steps is required (--steps or `steps` in the config)".into(),
                )
                .into());
            };
            commands::schedule(&explicit, &implicit, &out, steps, seed, &cfg)
        }
        Command::LossCheck { batch, out, .. } => {
            commands::loss_check(&batch, out.as_deref(), &cfg).map(drop)
        }
        Command::Evaluate {
            refs,
            hyps,
            out,
            extractor,
            ..
        } => commands::evaluate(&refs, &hyps, &out, extractor, &cfg).map(drop),
        Command::Report { manifest, out } => commands::report(&manifest, &out),
        Command::Demo { seed, out } => demo::run(seed, &out, &cfg),
    }
}

/// Machine-readable kind for the final error line.
fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<emocot_core::Error>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.kind();
        }
    }
    for cause in err.chain() {
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
    }
    "internal"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = serde_json::to_string(&format!("{err:#}")).expect("string encodes");
            eprintln!("error kind={} message={message}", error_kind(&err));
            ExitCode::FAILURE
        }
    }
}
