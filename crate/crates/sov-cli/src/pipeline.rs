//! Subcommand implementations: annotate, ask, evaluate (live, mock, or
//! replay), and the brute-force oracle.

use crate::config::RunConfig;
use crate::util::{file_digest, parallel_map, stem_of, write_atomic};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sov_core::annotate::{render, SovImage};
use sov_core::client::{AnswerSource, ModelAnswer, VlmClient};
use sov_core::dataset::{resolve_image_path, DatasetManifest, ManifestEntry, SCHEMA_VERSION};
use sov_core::eval::{
    emit_report, match_faces, score, EvalReport, MatchResult, ReportFormats, RunMetadata,
};
use sov_core::geometry::{brute_force_resolve, resolve_overlaps, AnnotatedFace, FaceDetection};
use sov_core::landmarks::{extract_features_with, ExpressionFeatures};
use sov_core::mock::{MockModel, OracleBook, OracleEntry};
use sov_core::parse::{parse_text_with, default_synonyms, ParseOptions, ParsedPrediction};
use sov_core::prompts::{build_per_person_with, build_plain_with, PromptMode, PromptRequest};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Sidecar JSON written next to every rendered image: the retained faces and
/// their auxiliary expression hints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FacesFile {
    pub schema_version: u32,
    pub image_path: String,
    pub source_digest: String,
    pub epsilon: f64,
    pub faces: Vec<AnnotatedFace>,
    #[serde(default)]
    pub expression_hints: BTreeMap<u32, ExpressionFeatures>,
}

/// How answers are produced.
#[derive(Debug, Clone)]
pub enum MockSpec {
    Oracle,
    Wrong,
    Echo(String),
    Script(PathBuf),
}

impl MockSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        if spec == "oracle" {
            Ok(MockSpec::Oracle)
        } else if spec == "wrong" {
            Ok(MockSpec::Wrong)
        } else if let Some(text) = spec.strip_prefix("echo:") {
            Ok(MockSpec::Echo(text.to_string()))
        } else if let Some(path) = spec.strip_prefix("script:") {
            Ok(MockSpec::Script(PathBuf::from(path)))
        } else {
            bail!("unknown mock spec `{spec}` (expected oracle | wrong | echo:<text> | script:<file>)")
        }
    }
}

/// One annotated image ready for dispatch and scoring.
struct PreparedImage {
    image_path: String,
    stem: String,
    faces: Vec<AnnotatedFace>,
    request: PromptRequest,
    matching: MatchResult,
    source_digest: String,
    sov_png: Vec<u8>,
    faces_file: FacesFile,
}

fn hints_for(faces: &[AnnotatedFace], cfg: &RunConfig) -> BTreeMap<u32, ExpressionFeatures> {
    faces
        .iter()
        .filter_map(|f| {
            f.landmarks
                .as_ref()
                .map(|lm| (f.id, extract_features_with(lm, &cfg.hints)))
        })
        .collect()
}

/// Detection ingestion, overlap resolution, rendering, and prompt building
/// for one manifest entry.
fn prepare_entry(entry: &ManifestEntry, base: &Path, cfg: &RunConfig) -> Result<PreparedImage> {
    let img_path = resolve_image_path(base, &entry.image_path);
    let stage = |s: &str| format!("{s} stage ({})", entry.image_path);

    let source = image::open(&img_path)
        .with_context(|| stage(&format!("load: cannot open {}", img_path.display())))?
        .to_rgb8();

    let detections: Vec<FaceDetection> = entry
        .faces
        .iter()
        .map(|f| {
            let d = f.to_detection()?;
            d.validate_within_image(source.width(), source.height())?;
            Ok(d)
        })
        .collect::<std::result::Result<_, sov_core::geometry::GeometryError>>()
        .with_context(|| stage("ingest"))?;

    let faces = resolve_overlaps(&detections, cfg.epsilon)
        .with_context(|| stage("overlap-resolution"))?;

    let sov = render(&source, &faces, &cfg.style).with_context(|| stage("render"))?;
    let sov_png = sov.png_bytes().with_context(|| stage("encode"))?;

    let ids = sov.face_ids();
    let request = match cfg.arm.mode() {
        PromptMode::PerPerson if !ids.is_empty() => {
            build_per_person_with(&cfg.templates, &sov, &ids).with_context(|| stage("prompt"))?
        }
        _ => build_plain_with(&cfg.templates, &sov, None).with_context(|| stage("prompt"))?,
    };

    let gt_boxes: Vec<_> = entry.faces.iter().map(|f| f.bbox).collect();
    let matching = match_faces(&gt_boxes, &faces, cfg.iou_threshold);

    let faces_file = FacesFile {
        schema_version: SCHEMA_VERSION,
        image_path: entry.image_path.clone(),
        source_digest: sov.source_digest.clone(),
        epsilon: cfg.epsilon,
        expression_hints: hints_for(&faces, cfg),
        faces: faces.clone(),
    };

    Ok(PreparedImage {
        image_path: entry.image_path.clone(),
        stem: stem_of(Path::new(&entry.image_path)),
        faces,
        request,
        matching,
        source_digest: sov.source_digest.clone(),
        sov_png,
        faces_file,
    })
}

fn oracle_book(manifest: &DatasetManifest, prepared: &[PreparedImage]) -> OracleBook {
    let mut book = OracleBook::default();
    for (entry, prep) in manifest.entries.iter().zip(prepared) {
        let mut emotions = BTreeMap::new();
        for pair in &prep.matching.pairs {
            if let Some(gt) = entry.faces[pair.gt_index].gt_emotion {
                emotions.insert(pair.face_id, gt);
            }
        }
        book.insert(
            prep.source_digest.clone(),
            OracleEntry {
                face_count: entry.faces.len(),
                emotions,
            },
        );
    }
    book
}

fn answer_source(
    mock: Option<&MockSpec>,
    cfg: &RunConfig,
    book: OracleBook,
    log_dir: Option<PathBuf>,
) -> Result<Box<dyn AnswerSource>> {
    match mock {
        Some(MockSpec::Oracle) => Ok(Box::new(MockModel::oracle(book))),
        Some(MockSpec::Wrong) => Ok(Box::new(MockModel::fixed_wrong(book))),
        Some(MockSpec::Echo(text)) => Ok(Box::new(MockModel::echo(text.clone()))),
        Some(MockSpec::Script(path)) => {
            Ok(Box::new(MockModel::scripted_from_file(path).context("loading mock script")?))
        }
        None => {
            let mut client = VlmClient::new(cfg.endpoint.clone()).context("building HTTP client")?;
            if let Some(dir) = log_dir {
                std::fs::create_dir_all(&dir)?;
                client = client.with_log_dir(dir);
            }
            Ok(Box::new(client))
        }
    }
}

pub struct EvaluateArgs {
    pub manifest: PathBuf,
    pub out: Option<PathBuf>,
    pub mock: Option<MockSpec>,
    pub replay: Option<PathBuf>,
}

/// Drives annotate -> ask -> parse -> score end to end and emits the report
/// files into the run directory.
pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<PathBuf> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let base = args
        .manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let run_dir = match &args.out {
        Some(dir) => dir.clone(),
        None => {
            let ts = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from(format!("sov-run-{ts}-{}", cfg.arm.name()))
        }
    };
    std::fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating run directory {}", run_dir.display()))?;

    // provenance: resolved config (redacted), input digests, wall-clock
    write_atomic(
        &run_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)?.as_bytes(),
    )?;
    let manifest_digest = file_digest(&args.manifest)?;
    write_atomic(
        &run_dir.join("run.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "started_unix_secs": std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            "manifest": args.manifest.display().to_string(),
            "manifest_digest": manifest_digest,
            "config_digest": cfg.digest(),
            "arm": cfg.arm.name(),
            "mode": match &args.mock { Some(_) => "mock", None => "live" },
            "replay": args.replay.as_ref().map(|p| p.display().to_string()),
        }))?
        .as_bytes(),
    )?;

    let workers = cfg.endpoint.max_concurrent;
    let prepared: Vec<PreparedImage> = parallel_map(
        manifest.entries.iter().collect(),
        workers,
        |entry: &ManifestEntry| prepare_entry(entry, &base, cfg),
    )
    .into_iter()
    .collect::<Result<_>>()?;

    let images_dir = run_dir.join("images");
    for prep in &prepared {
        write_atomic(&images_dir.join(format!("{}.sov.png", prep.stem)), &prep.sov_png)?;
        write_atomic(
            &images_dir.join(format!("{}.faces.json", prep.stem)),
            serde_json::to_string_pretty(&prep.faces_file)?.as_bytes(),
        )?;
    }

    // fetch answers: replayed from a previous run directory, or dispatched
    let answers: Vec<ModelAnswer> = if let Some(replay_dir) = &args.replay {
        prepared
            .iter()
            .map(|prep| {
                let path = replay_dir.join("answers").join(format!("{}.answer.json", prep.stem));
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("replay: missing answer {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("replay: bad answer file {}", path.display()))
            })
            .collect::<Result<_>>()?
    } else {
        let source = answer_source(
            args.mock.as_ref(),
            cfg,
            oracle_book(&manifest, &prepared),
            Some(run_dir.join("transport")),
        )?;
        let source = &*source;
        parallel_map(prepared.iter().collect(), workers, |prep: &PreparedImage| {
            source
                .answer(&prep.request)
                .with_context(|| format!("dispatch stage ({})", prep.image_path))
        })
        .into_iter()
        .collect::<Result<_>>()?
    };

    let answers_dir = run_dir.join("answers");
    let mut predictions: BTreeMap<String, ParsedPrediction> = BTreeMap::new();
    let mut matches: BTreeMap<String, MatchResult> = BTreeMap::new();
    for (prep, answer) in prepared.iter().zip(&answers) {
        write_atomic(
            &answers_dir.join(format!("{}.answer.json", prep.stem)),
            serde_json::to_string_pretty(&answer)?.as_bytes(),
        )?;
        let ids = prep.request.face_ids.clone();
        let parsed = parse_text_with(
            &answer.raw_text,
            &ids,
            default_synonyms(),
            ParseOptions {
                align_plain: cfg.align_plain,
            },
        );
        write_atomic(
            &answers_dir.join(format!("{}.parsed.json", prep.stem)),
            serde_json::to_string_pretty(&parsed)?.as_bytes(),
        )?;
        predictions.insert(prep.image_path.clone(), parsed);
        matches.insert(prep.image_path.clone(), prep.matching.clone());
    }

    let report = score(
        &manifest,
        &predictions,
        &matches,
        RunMetadata {
            config_digest: cfg.digest(),
            manifest_digest,
            arm: Some(cfg.arm.name().to_string()),
        },
    )
    .context("scoring stage")?;
    emit_report(&report, &run_dir, ReportFormats::default()).context("writing report files")?;

    print_summary(&report);
    Ok(run_dir)
}

fn print_summary(report: &EvalReport) {
    println!("acc: {}", report.metric_definitions.accuracy);
    println!("r@1: {}", report.metric_definitions.recall_at_1);
    print!("{}", sov_core::eval::report_csv(report));
    if let Some(mae) = report.face_count_mae {
        println!("face_count_mae,{mae}");
    }
}

pub struct AnnotateArgs {
    pub detections: PathBuf,
    pub images_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Renders overlays for every entry of a detections file. Per-file failures
/// are logged and reported; any failure makes the command exit nonzero.
pub fn cmd_annotate(cfg: &RunConfig, args: &AnnotateArgs) -> Result<()> {
    let manifest = DatasetManifest::load_detections(&args.detections)?;
    let base = args
        .images_root
        .clone()
        .unwrap_or_else(|| {
            args.detections
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .to_path_buf()
        });

    let results = parallel_map(
        manifest.entries.iter().collect(),
        cfg.endpoint.max_concurrent,
        |entry: &ManifestEntry| -> Result<String> {
            let prep = prepare_entry(entry, &base, cfg)?;
            // default: beside the input image; --out overrides
            let target_dir = match &args.out {
                Some(dir) => dir.clone(),
                None => resolve_image_path(&base, &entry.image_path)
                    .parent()
                    .unwrap_or_else(|| Path::new("."))
                    .to_path_buf(),
            };
            write_atomic(&target_dir.join(format!("{}.sov.png", prep.stem)), &prep.sov_png)?;
            write_atomic(
                &target_dir.join(format!("{}.faces.json", prep.stem)),
                serde_json::to_string_pretty(&prep.faces_file)?.as_bytes(),
            )?;
            Ok(format!("{}: {} faces retained", entry.image_path, prep.faces.len()))
        },
    );

    let mut failures = 0;
    for r in results {
        match r {
            Ok(line) => println!("{line}"),
            Err(e) => {
                failures += 1;
                log::error!("{e:#}");
                eprintln!("error: {e:#}");
            }
        }
    }
    if failures > 0 {
        bail!("{failures} image(s) failed to annotate");
    }
    Ok(())
}

pub struct AskArgs {
    pub image: PathBuf,
    pub faces: PathBuf,
    pub mode: Option<PromptMode>,
    pub ids: Option<Vec<u32>>,
    pub question: Option<String>,
    pub mock: Option<MockSpec>,
    pub out: Option<PathBuf>,
}

/// Sends one question about an already-annotated image and prints the raw
/// and parsed answers.
pub fn cmd_ask(cfg: &RunConfig, args: &AskArgs) -> Result<()> {
    let png = std::fs::read(&args.image)
        .with_context(|| format!("reading image {}", args.image.display()))?;
    let pixels = sov_core::annotate::decode_png(&png).context("decoding annotated image")?;
    let faces_text = std::fs::read_to_string(&args.faces)
        .with_context(|| format!("reading faces file {}", args.faces.display()))?;
    let faces_file: FacesFile = serde_json::from_str(&faces_text)
        .with_context(|| format!("parsing faces file {}", args.faces.display()))?;

    let sov = SovImage {
        pixels,
        faces: faces_file.faces.clone(),
        style: cfg.style.clone(),
        source_digest: faces_file.source_digest.clone(),
    };

    let mode = args.mode.unwrap_or(PromptMode::PerPerson);
    let request = match mode {
        PromptMode::PerPerson => {
            let ids = args.ids.clone().unwrap_or_else(|| sov.face_ids());
            build_per_person_with(&cfg.templates, &sov, &ids).context("building prompt")?
        }
        PromptMode::PlainText => build_plain_with(&cfg.templates, &sov, args.question.as_deref())
            .context("building prompt")?,
    };

    if args.mock.is_none() && matches!(mode, PromptMode::PerPerson) && args.question.is_some() {
        log::warn!("--question is ignored in per-person mode");
    }

    let source = answer_source(args.mock.as_ref(), cfg, OracleBook::default(), None)?;
    let answer = source.answer(&request).context("dispatch stage")?;
    let parsed = parse_text_with(
        &answer.raw_text,
        &request.face_ids,
        default_synonyms(),
        ParseOptions {
            align_plain: cfg.align_plain,
        },
    );

    println!("{}", serde_json::to_string_pretty(&serde_json::json!({
        "question": request.question,
        "raw_text": answer.raw_text,
        "parsed": parsed,
    }))?);

    if let Some(dir) = &args.out {
        let stem = stem_of(&args.image);
        write_atomic(
            &dir.join(format!("{stem}.answer.json")),
            serde_json::to_string_pretty(&answer)?.as_bytes(),
        )?;
        write_atomic(
            &dir.join(format!("{stem}.parsed.json")),
            serde_json::to_string_pretty(&parsed)?.as_bytes(),
        )?;
    }
    Ok(())
}

pub struct OracleArgs {
    pub detections: PathBuf,
    pub out: Option<PathBuf>,
}

/// Runs the quadratic reference resolver over a detections file and prints
/// (or writes) the retained sets keyed by image path.
pub fn cmd_oracle(cfg: &RunConfig, args: &OracleArgs) -> Result<()> {
    let manifest = DatasetManifest::load_detections(&args.detections)?;
    let mut output: BTreeMap<String, Vec<AnnotatedFace>> = BTreeMap::new();
    for entry in &manifest.entries {
        let detections: Vec<FaceDetection> = entry
            .faces
            .iter()
            .map(|f| f.to_detection())
            .collect::<std::result::Result<_, sov_core::geometry::GeometryError>>()
            .with_context(|| format!("ingest stage ({})", entry.image_path))?;
        let retained = brute_force_resolve(&detections, cfg.epsilon)?;
        output.insert(entry.image_path.clone(), retained);
    }
    let json = serde_json::to_string_pretty(&output)?;
    match &args.out {
        Some(path) => write_atomic(path, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Prints the side-by-side bucket diff of two run directories.
pub fn cmd_diff(run_a: &Path, run_b: &Path) -> Result<()> {
    let load = |dir: &Path| -> Result<EvalReport> {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    };
    let a = load(run_a)?;
    let b = load(run_b)?;
    print!("{}", sov_core::eval::diff_reports(&a, &b));
    Ok(())
}

/// Prints per-bucket dataset statistics for a manifest.
pub fn cmd_stats(manifest_path: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let stats = manifest.stats();
    println!("bucket,images,faces");
    for (bucket, count) in &stats.per_bucket {
        println!("{},{},{}", bucket.name(), count.images, count.faces);
    }
    println!("total,{},{}", stats.total.images, stats.total.faces);
    Ok(())
}
