//! `sov` — face marking, prompting, and zero-shot emotion evaluation against
//! OpenAI-compatible vision endpoints, fully runnable offline with `--mock`.

mod config;
mod fixture;
mod pipeline;
mod util;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use config::CliOverrides;
use pipeline::MockSpec;
use sov_core::client::ClientError;
use sov_core::dataset::SchemaError;
use sov_core::geometry::GeometryError;
use sov_core::prompts::{PromptArm, PromptMode};
use std::path::PathBuf;

const EXIT_PIPELINE: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_TRANSPORT: i32 = 3;

#[derive(Parser)]
#[command(
    name = "sov",
    version,
    about = "Number faces on whole images and evaluate zero-shot emotion recognition"
)]
struct Cli {
    /// TOML config file (flags and env override it)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overlap threshold for face suppression, in (0, 1)
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// IoU threshold for ground-truth matching
    #[arg(long, global = true)]
    iou: Option<f64>,
    /// Visual prompt arm: baseline | box | box+number | sov
    #[arg(long, global = true)]
    arm: Option<String>,
    /// Endpoint base URL (also SOV_BASE_URL)
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Model name (also SOV_MODEL)
    #[arg(long, global = true)]
    model: Option<String>,
    /// Max in-flight requests / worker threads
    #[arg(long, global = true)]
    max_concurrent: Option<usize>,
    /// Prompt template TOML file
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Align id-free plain-text answers to face ids by order (heuristic)
    #[arg(long, global = true)]
    align_plain: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render numbered boxes and landmarks over images from a detections file
    Annotate(AnnotateCli),
    /// Ask one question about an annotated image
    Ask(AskCli),
    /// Run the full annotate -> ask -> parse -> score pipeline
    Evaluate(EvaluateCli),
    /// Run the brute-force overlap resolver (debugging reference)
    Oracle(OracleCli),
    /// Generate a deterministic synthetic dataset for offline runs
    Fixture(FixtureCli),
    /// Compare two run directories bucket by bucket
    Diff(DiffCli),
    /// Print per-bucket image/face counts for a manifest
    Stats(StatsCli),
}

#[derive(Args)]
struct AnnotateCli {
    /// Detections/manifest JSON (schema_version 1)
    #[arg(long)]
    detections: PathBuf,
    /// Directory image paths are relative to (default: the detections file's directory)
    #[arg(long)]
    images_root: Option<PathBuf>,
    /// Write outputs here instead of beside each input image
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AskCli {
    /// Annotated PNG (from `annotate`)
    #[arg(long)]
    image: PathBuf,
    /// Matching .faces.json sidecar
    #[arg(long)]
    faces: PathBuf,
    /// plain | per-person (default per-person)
    #[arg(long)]
    mode: Option<String>,
    /// Face ids to ask about, comma separated (default: all)
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<u32>>,
    /// Override question (plain mode)
    #[arg(long)]
    question: Option<String>,
    /// oracle | wrong | echo:<text> | script:<file>
    #[arg(long)]
    mock: Option<String>,
    /// Also write answer/parsed JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateCli {
    /// Evaluation manifest JSON (every face needs gt_emotion)
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory (default: ./sov-run-<timestamp>-<arm>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// oracle | wrong | echo:<text> | script:<file>
    #[arg(long)]
    mock: Option<String>,
    /// Re-score answers from a previous run directory instead of dispatching
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct OracleCli {
    /// Detections/manifest JSON
    #[arg(long)]
    detections: PathBuf,
    /// Write the retained sets here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureCli {
    /// Output directory for images + manifest.json
    #[arg(long)]
    out: PathBuf,
    /// Number of images (face counts cycle Easy/Medium/Hard)
    #[arg(long, default_value_t = 10)]
    images: usize,
    /// RNG seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct DiffCli {
    run_a: PathBuf,
    run_b: PathBuf,
}

#[derive(Args)]
struct StatsCli {
    #[arg(long)]
    manifest: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    let overrides = CliOverrides {
        epsilon: cli.epsilon,
        iou_threshold: cli.iou,
        arm: match &cli.arm {
            Some(name) => Some(
                PromptArm::from_name(name)
                    .ok_or_else(|| anyhow::anyhow!("unknown arm `{name}`"))?,
            ),
            None => None,
        },
        align_plain: cli.align_plain,
        endpoint: cli.endpoint.clone(),
        model: cli.model.clone(),
        max_concurrent: cli.max_concurrent,
        templates_file: cli.templates.clone(),
    };
    let cfg = config::resolve(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Annotate(a) => pipeline::cmd_annotate(
            &cfg,
            &pipeline::AnnotateArgs {
                detections: a.detections,
                images_root: a.images_root,
                out: a.out,
            },
        ),
        Command::Ask(a) => {
            let mode = match a.mode.as_deref() {
                None => None,
                Some("plain") => Some(PromptMode::PlainText),
                Some("per-person") => Some(PromptMode::PerPerson),
                Some(other) => anyhow::bail!("unknown mode `{other}` (plain | per-person)"),
            };
            pipeline::cmd_ask(
                &cfg,
                &pipeline::AskArgs {
                    image: a.image,
                    faces: a.faces,
                    mode,
                    ids: a.ids,
                    question: a.question,
                    mock: a.mock.as_deref().map(MockSpec::parse).transpose()?,
                    out: a.out,
                },
            )
        }
        Command::Evaluate(a) => {
            let run_dir = pipeline::cmd_evaluate(
                &cfg,
                &pipeline::EvaluateArgs {
                    manifest: a.manifest,
                    out: a.out,
                    mock: a.mock.as_deref().map(MockSpec::parse).transpose()?,
                    replay: a.replay,
                },
            )?;
            println!("run directory: {}", run_dir.display());
            Ok(())
        }
        Command::Oracle(a) => pipeline::cmd_oracle(
            &cfg,
            &pipeline::OracleArgs {
                detections: a.detections,
                out: a.out,
            },
        ),
        Command::Fixture(a) => {
            let manifest = fixture::generate(
                &a.out,
                &fixture::FixtureOptions {
                    images: a.images,
                    seed: a.seed,
                },
            )?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Diff(a) => pipeline::cmd_diff(&a.run_a, &a.run_b),
        Command::Stats(a) => pipeline::cmd_stats(&a.manifest),
    }
}

/// 0 success, 1 pipeline error, 2 config/schema error, 3 transport error.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(client) = cause.downcast_ref::<ClientError>() {
            return if client.is_transport() {
                EXIT_TRANSPORT
            } else {
                EXIT_CONFIG
            };
        }
        if cause.downcast_ref::<SchemaError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(geo) = cause.downcast_ref::<GeometryError>() {
            if matches!(geo, GeometryError::InvalidEpsilon(_)) {
                return EXIT_CONFIG;
            }
        }
        let text = cause.to_string();
        if text.contains("config file") || text.contains("epsilon must be") {
            return EXIT_CONFIG;
        }
        // transport failures surfaced through stage contexts
        if let Some(src) = cause.source() {
            if src.downcast_ref::<ClientError>().is_some() {
                continue;
            }
        }
    }
    EXIT_PIPELINE
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code_for(&err));
    }
}
