use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dice::metrics::cost_model;
use dice::pipeline::{run, Overrides, PipelineConfig, PipelineError, Stage};
use dice::sampler::Scheme;

/// Difficulty-weighted scenario sampling pipeline.
///
/// Stages run in order: gen-data, simulate, pretrain, finetune, embed,
/// cluster, then sample or evaluate. Each writes its artifacts and a
/// `<command>.manifest.json` into the run directory.
#[derive(Parser)]
#[command(name = "dice", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON). Built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Run directory; overrides paths.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the evaluation corpus, pretraining set and labeled pool.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Corpus seed (world.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-drive every scenario with the ego policy and record outcomes.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Masked-autoencoder pretraining of the backbone.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Training seed (train.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the difficulty head on the frozen backbone.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Head seed (difficulty.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Ego embeddings and difficulty scores for the corpus.
    Embed {
        #[command(flatten)]
        common: Common,
    },
    /// k-means over DICE features and over the plain embeddings.
    Cluster {
        #[command(flatten)]
        common: Common,
        /// k-means seed (clustering.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of clusters M (clustering.clusters).
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Draw one sample with the configured scheme.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Sampling seed (sampling.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Sample size B.
        #[arg(long, conflicts_with = "fraction")]
        budget: Option<usize>,
        /// Sample size as a corpus fraction f.
        #[arg(long)]
        fraction: Option<f64>,
        /// Importance-weight offset K0 (sampling.k0).
        #[arg(long)]
        k0: Option<f64>,
        /// random, uniform_clusters, dice or top_difficulty.
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Sensitivity curves of all four schemes.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// First evaluation seed; the seed count is kept.
        #[arg(long)]
        seed: Option<u64>,
        /// Importance-weight offset K0 (sampling.k0).
        #[arg(long)]
        k0: Option<f64>,
    },
    /// Driving hours and dollars to re-validate a mileage.
    Cost {
        #[arg(long)]
        miles: f64,
        /// Average speed in mph.
        #[arg(long, default_value_t = 35.0)]
        speed: f64,
        #[arg(long, default_value_t = 1.624)]
        cost_per_hour: f64,
        /// Confidence factor on the mileage.
        #[arg(long, default_value_t = 10.0)]
        factor: f64,
    },
}

fn dollars(v: f64) -> String {
    let whole = v.round() as u64;
    let digits = whole.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    format!("${out}")
}

fn stage_run(stage: Stage, common: Common, mut o: Overrides) -> Result<serde_json::Value, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    o.out = common.out;
    cfg.apply(stage, &o);
    run(stage, &cfg, common.jobs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim_end()}));
            return ExitCode::from(2);
        }
    };
    let seed_only = |seed| Overrides {
        seed,
        ..Overrides::default()
    };
    let result = match cli.cmd {
        Cmd::GenData { common, seed } => stage_run(Stage::GenData, common, seed_only(seed)),
        Cmd::Simulate { common } => stage_run(Stage::Simulate, common, Overrides::default()),
        Cmd::Pretrain { common, seed } => stage_run(Stage::Pretrain, common, seed_only(seed)),
        Cmd::Finetune { common, seed } => stage_run(Stage::Finetune, common, seed_only(seed)),
        Cmd::Embed { common } => stage_run(Stage::Embed, common, Overrides::default()),
        Cmd::Cluster { common, seed, clusters } => stage_run(
            Stage::Cluster,
            common,
            Overrides {
                seed,
                clusters,
                ..Overrides::default()
            },
        ),
        Cmd::Sample {
            common,
            seed,
            budget,
            fraction,
            k0,
            scheme,
        } => stage_run(
            Stage::Sample,
            common,
            Overrides {
                seed,
                budget,
                fraction,
                k0,
                scheme,
                ..Overrides::default()
            },
        ),
        Cmd::Evaluate { common, seed, k0 } => stage_run(
            Stage::Evaluate,
            common,
            Overrides {
                seed,
                k0,
                ..Overrides::default()
            },
        ),
        Cmd::Cost {
            miles,
            speed,
            cost_per_hour,
            factor,
        } => cost_model(miles, speed, cost_per_hour, factor)
            .map(|c| {
                json!({
                    "miles": miles,
                    "speed_mph": speed,
                    "cost_per_hour": cost_per_hour,
                    "factor": factor,
                    "hours": c.hours,
                    "dollars": c.dollars,
                    "cost": dollars(c.dollars),
                })
            })
            .map_err(|e| PipelineError::Stage {
                stage: "cost",
                message: e.to_string(),
            }),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(if matches!(e, PipelineError::Config(_)) { 2 } else { 1 })
        }
    }
}
