//! Deterministic in-process stand-ins for the remote model.
//!
//! The mock is a first-class run mode, not a test-only path: the whole
//! offline acceptance flow runs against it. The oracle variant answers every
//! per-person question correctly from ground truth, which proves the harness
//! scores 100% on a perfect model; the fixed-wrong variant is its adversarial
//! twin.

use crate::client::{AnswerSource, AttemptRecord, ClientError, ModelAnswer, TransportMeta};
use crate::parse::Emotion;
use crate::prompts::{PromptMode, PromptRequest};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Ground truth for one image, keyed by rendered face id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OracleEntry {
    pub face_count: usize,
    pub emotions: BTreeMap<u32, Emotion>,
}

/// Per-image ground truth, keyed by the *source* image digest so the same
/// book serves every prompt arm.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OracleBook {
    pub entries: HashMap<String, OracleEntry>,
}

impl OracleBook {
    pub fn insert(&mut self, source_digest: impl Into<String>, entry: OracleEntry) {
        self.entries.insert(source_digest.into(), entry);
    }
}

/// One scripted canned response; matches by exact request digest or by a
/// substring of the question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_contains: Option<String>,
    pub text: String,
}

impl ScriptRule {
    fn matches(&self, request: &PromptRequest, digest: &str) -> bool {
        if let Some(d) = &self.digest {
            if d == digest {
                return true;
            }
        }
        if let Some(snippet) = &self.question_contains {
            if request.question.contains(snippet.as_str()) {
                return true;
            }
        }
        false
    }
}

/// What the mock answers with.
#[derive(Debug, Clone)]
pub enum MockScript {
    /// The same text for every request.
    Echo(String),
    /// First matching rule wins; no match is an `Unscripted` error.
    Scripted(Vec<ScriptRule>),
    /// Correct per-person answers read from ground truth.
    Oracle(OracleBook),
    /// Deterministically wrong emotion for every face, wrong count too.
    FixedWrong(OracleBook),
}

/// Deterministic in-process endpoint.
pub struct MockModel {
    script: MockScript,
}

impl MockModel {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn echo(text: impl Into<String>) -> Self {
        Self::new(MockScript::Echo(text.into()))
    }

    pub fn scripted(rules: Vec<ScriptRule>) -> Self {
        Self::new(MockScript::Scripted(rules))
    }

    pub fn oracle(book: OracleBook) -> Self {
        Self::new(MockScript::Oracle(book))
    }

    pub fn fixed_wrong(book: OracleBook) -> Self {
        Self::new(MockScript::FixedWrong(book))
    }

    /// Loads scripted rules from a JSON array of [`ScriptRule`].
    pub fn scripted_from_file(path: &std::path::Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Config(format!("cannot read {}: {e}", path.display())))?;
        let rules: Vec<ScriptRule> = serde_json::from_str(&text)
            .map_err(|e| ClientError::Config(format!("bad mock script {}: {e}", path.display())))?;
        Ok(Self::scripted(rules))
    }

    fn book_answer(book: &OracleBook, request: &PromptRequest, wrong: bool) -> Result<String, ClientError> {
        let entry = book
            .entries
            .get(&request.source_digest)
            .ok_or_else(|| ClientError::Unscripted {
                digest: request.source_digest.clone(),
            })?;
        let count = if wrong { entry.face_count + 1 } else { entry.face_count };
        let mut lines = vec![format!("There are {count} visible faces.")];
        let ids: Vec<u32> = match request.mode {
            PromptMode::PerPerson if !request.target_ids.is_empty() => request.target_ids.clone(),
            _ => entry.emotions.keys().copied().collect(),
        };
        for id in ids {
            if let Some(&gt) = entry.emotions.get(&id) {
                let label = if wrong { gt.misclassified() } else { gt };
                lines.push(format!("Person {id}: {label}"));
            }
        }
        Ok(lines.join("\n"))
    }
}

impl AnswerSource for MockModel {
    fn answer(&self, request: &PromptRequest) -> Result<ModelAnswer, ClientError> {
        let digest = request.digest();
        let text = match &self.script {
            MockScript::Echo(text) => text.clone(),
            MockScript::Scripted(rules) => rules
                .iter()
                .find(|r| r.matches(request, &digest))
                .map(|r| r.text.clone())
                .ok_or(ClientError::Unscripted { digest: digest.clone() })?,
            MockScript::Oracle(book) => Self::book_answer(book, request, false)?,
            MockScript::FixedWrong(book) => Self::book_answer(book, request, true)?,
        };
        Ok(ModelAnswer {
            raw_text: text,
            request_digest: digest,
            latency_secs: 0.0,
            token_usage: None,
            transport_meta: TransportMeta {
                attempts: vec![AttemptRecord {
                    status: Some(200),
                    outcome: "mock".into(),
                    backoff_ms: 0,
                }],
                retries: 0,
                downscaled: false,
            },
        })
    }
}
