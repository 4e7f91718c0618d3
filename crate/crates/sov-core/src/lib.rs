//! Set-of-Vision (SoV) face marking and zero-shot emotion evaluation.
//!
//! The library covers the full pipeline around an external face detector and
//! a remote vision-language chat endpoint:
//!
//! 1. [`geometry`] — box arithmetic and area-priority overlap resolution that
//!    turns raw detections into a numbered, conflict-free face set;
//! 2. [`landmarks`] — five-point landmark sets and expression ratios;
//! 3. [`annotate`] — deterministic rendering of numbered boxes and landmark
//!    dots over the whole image, background preserved bit-exactly;
//! 4. [`prompts`] — group-level and per-person question construction;
//! 5. [`client`] / [`mock`] — an OpenAI-compatible chat client with retries
//!    and bounded concurrency, plus deterministic in-process mocks;
//! 6. [`parse`] — total free-text answer parsing into per-person labels;
//! 7. [`dataset`] — manifest ingestion and Easy/Medium/Hard bucketing;
//! 8. [`eval`] — gt matching, accuracy / recall@1, and report emission.

pub mod annotate;
pub mod client;
pub mod dataset;
pub mod digest;
mod font;
pub mod eval;
pub mod geometry;
pub mod landmarks;
pub mod mock;
pub mod parse;
pub mod prompts;

pub use annotate::{render, RenderStyle, SovImage};
pub use client::{AnswerSource, ApiKey, ClientError, EndpointConfig, ModelAnswer, VlmClient};
pub use dataset::{DatasetManifest, DifficultyBucket};
pub use eval::{match_faces, score, EvalReport};
pub use geometry::{
    brute_force_resolve, resolve_overlaps, AnnotatedFace, BoundingBox, FaceDetection,
};
pub use landmarks::{extract_features, ExpressionFeatures, ExpressionHint, LandmarkSet};
pub use mock::{MockModel, MockScript, OracleBook, OracleEntry};
pub use parse::{parse, parse_text, Emotion, ParsedPrediction};
pub use prompts::{build_per_person, build_plain, PromptArm, PromptMode, PromptRequest};
