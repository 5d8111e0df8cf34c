use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use perturbaudit::metrics::{ConfidenceTarget, GoldAlignment, DEFAULT_EPSILON};
use perturbaudit::pipeline::{run_pipeline, BackendSpec, Command, PublishedSources, RunConfig};

/// Occlusion and lower-court-insertion audits for judgment prediction models.
#[derive(Parser)]
#[command(name = "perturbaudit", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Canonical corpus JSONL (annotation JSONL for `iaa`).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Base URL of a model service.
    #[arg(long, global = true, env = "PERTURBAUDIT_MODEL_URL")]
    backend_url: Option<String>,
    /// Reference classifier weights (JSON); used instead of a model service.
    #[arg(long, global = true, conflicts_with = "backend_url")]
    weights: Option<PathBuf>,
    /// Dead band around zero for the neutral label.
    #[arg(long, global = true, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Class whose confidence shift is measured.
    #[arg(long, global = true, value_enum, default_value = "predicted")]
    target: TargetArg,
    /// Reference outcome for the annotated labels.
    #[arg(long, global = true, value_enum, default_value = "prediction")]
    align: AlignArg,
    /// Largest occlusion set size.
    #[arg(long, global = true, default_value_t = 4)]
    k_max: usize,
    /// Sample at most this many combinations per (case, label, k).
    #[arg(long, global = true)]
    max_per_cell: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Requests in flight against a model service.
    #[arg(long, global = true, default_value_t = 8)]
    concurrency: usize,
    /// Per-request timeout in seconds.
    #[arg(long, global = true, default_value_t = 60.0)]
    timeout: f64,
    /// Extra request header, `Name: value`.
    #[arg(long, global = true)]
    auth_header: Option<String>,
    /// Row label in rendered tables.
    #[arg(long, global = true)]
    model_name: Option<String>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TargetArg {
    Predicted,
    Gold,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AlignArg {
    Prediction,
    Outcome,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write occlusion instances for every case.
    GenerateOcclusion,
    /// Write lower-court-insertion instances for every case.
    GenerateLci,
    /// Fit a temperature on a validation corpus.
    Calibrate,
    /// Predict occlusion instances and score them against the annotations.
    EvaluateOcclusion,
    /// Predict insertion instances and compute MES and flip rates.
    EvaluateLci,
    /// Pairwise agreement between annotators.
    Iaa,
    /// Render tables from the run directory.
    Report,
    /// Convert the published occlusion/LCI datasets into a run directory.
    ImportPublished {
        /// `SET=PATH`, e.g. `1=occlusion_test_1.jsonl`; repeatable.
        #[arg(long = "occlusion", value_parser = parse_set_path)]
        occlusion: Vec<(u8, PathBuf)>,
        #[arg(long)]
        lci: Option<PathBuf>,
    },
    /// Write a synthetic corpus and matching reference weights.
    Synth {
        #[arg(long, default_value_t = 30)]
        cases: usize,
        /// Give court names small weights so insertions move predictions.
        #[arg(long)]
        weighted_courts: bool,
    },
}

fn parse_set_path(s: &str) -> Result<(u8, PathBuf), String> {
    let (k, p) = s.split_once('=').ok_or("expected SET=PATH")?;
    let k: u8 = k.parse().map_err(|_| format!("bad set number {k:?}"))?;
    Ok((k, PathBuf::from(p)))
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: configuration error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let c = cli.common;
    if !(c.timeout.is_finite() && c.timeout > 0.0) {
        return config_error("timeout must be positive");
    }
    let auth_header = match c.auth_header.as_deref().map(|h| h.split_once(':')) {
        None => None,
        Some(Some((name, value))) => Some((name.trim().to_string(), value.trim().to_string())),
        Some(None) => return config_error("--auth-header must look like `Name: value`"),
    };
    let backend = match (c.backend_url, c.weights) {
        (_, Some(w)) => Some(BackendSpec::ReferenceWeights(w)),
        (Some(url), None) => Some(BackendSpec::Remote(url)),
        (None, None) => None,
    };
    let config = RunConfig {
        corpus: c.corpus,
        backend,
        epsilon: c.epsilon,
        target: match c.target {
            TargetArg::Predicted => ConfidenceTarget::Predicted,
            TargetArg::Gold => ConfidenceTarget::Gold,
        },
        alignment: match c.align {
            AlignArg::Prediction => GoldAlignment::PredictionRelative,
            AlignArg::Outcome => GoldAlignment::OutcomeRelative,
        },
        k_max: c.k_max,
        max_per_cell: c.max_per_cell,
        seed: c.seed,
        out: c.out,
        concurrency: c.concurrency,
        timeout: Duration::from_secs_f64(c.timeout),
        auth_header,
        model_name: c.model_name,
    };
    let command = match cli.command {
        Cmd::GenerateOcclusion => Command::GenerateOcclusion,
        Cmd::GenerateLci => Command::GenerateLci,
        Cmd::Calibrate => Command::Calibrate,
        Cmd::EvaluateOcclusion => Command::EvaluateOcclusion,
        Cmd::EvaluateLci => Command::EvaluateLci,
        Cmd::Iaa => Command::Iaa,
        Cmd::Report => Command::Report,
        Cmd::ImportPublished { occlusion, lci } => {
            Command::ImportPublished(PublishedSources { occlusion, lci })
        }
        Cmd::Synth {
            cases,
            weighted_courts,
        } => Command::Synth {
            cases,
            weighted_courts,
        },
    };

    match run_pipeline(&config, &command) {
        Ok(summary) => {
            for note in &summary.notes {
                println!("{note}");
            }
            for f in &summary.outputs {
                println!("wrote {}", config.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
