//! Resolved run configuration with source precedence
//! CLI flag > environment > config file > default.
//!
//! The resolved view is serialized into every run directory (credential
//! excluded) so a run can be reproduced from its own artifacts.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sov_core::annotate::RenderStyle;
use sov_core::client::{ApiKey, EndpointConfig};
use sov_core::landmarks::HintThresholds;
use sov_core::prompts::{PromptArm, PromptTemplates};
use std::path::Path;

pub const BASE_URL_ENV: &str = "SOV_BASE_URL";
pub const MODEL_ENV: &str = "SOV_MODEL";

/// Fully resolved configuration; nothing is read from the environment after
/// this exists.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub epsilon: f64,
    pub iou_threshold: f64,
    pub arm: PromptArm,
    pub align_plain: bool,
    pub endpoint: EndpointConfig,
    pub style: RenderStyle,
    pub templates: PromptTemplates,
    pub hints: HintThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            iou_threshold: 0.5,
            arm: PromptArm::Sov,
            align_plain: false,
            endpoint: EndpointConfig::default(),
            style: RenderStyle::default(),
            templates: PromptTemplates::default(),
            hints: HintThresholds::default(),
        }
    }
}

impl RunConfig {
    /// Digest of the resolved configuration (credential excluded).
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sov_core::digest::sha256_hex(json.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bail!("epsilon must be strictly between 0 and 1, got {}", self.epsilon);
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            bail!("iou threshold must be within [0, 1], got {}", self.iou_threshold);
        }
        self.endpoint.validate().context("endpoint configuration")?;
        self.style.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.templates.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }
}

/// Optional overrides loadable from a TOML file; every field falls back to
/// the built-in default when absent.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epsilon: Option<f64>,
    pub iou_threshold: Option<f64>,
    pub arm: Option<String>,
    pub align_plain: Option<bool>,
    #[serde(default)]
    pub endpoint: FileEndpoint,
    #[serde(default)]
    pub style: FileStyle,
    pub prompts: Option<PromptTemplates>,
    pub hints: Option<HintThresholds>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEndpoint {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub max_concurrent: Option<usize>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub backoff_initial_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileStyle {
    pub palette: Option<Vec<[u8; 3]>>,
    pub line_thickness_frac: Option<f64>,
    pub label_scale_frac: Option<f64>,
    pub landmark_radius_frac: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
    }
}

/// Flag-level overrides collected from the command line.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub epsilon: Option<f64>,
    pub iou_threshold: Option<f64>,
    pub arm: Option<PromptArm>,
    pub align_plain: bool,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub max_concurrent: Option<usize>,
    pub templates_file: Option<std::path::PathBuf>,
}

/// Applies the precedence chain and returns the resolved configuration.
pub fn resolve(config_file: Option<&Path>, cli: &CliOverrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();

    if let Some(path) = config_file {
        let file = FileConfig::load(path)?;
        if let Some(v) = file.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = file.iou_threshold {
            cfg.iou_threshold = v;
        }
        if let Some(name) = &file.arm {
            cfg.arm = PromptArm::from_name(name)
                .with_context(|| format!("unknown arm `{name}` in {}", path.display()))?;
        }
        if let Some(v) = file.align_plain {
            cfg.align_plain = v;
        }
        let e = &file.endpoint;
        if let Some(v) = &e.base_url {
            cfg.endpoint.base_url = v.clone();
        }
        if let Some(v) = &e.model {
            cfg.endpoint.model_name = v.clone();
        }
        if let Some(v) = e.timeout_secs {
            cfg.endpoint.timeout_secs = v;
        }
        if let Some(v) = e.max_retries {
            cfg.endpoint.max_retries = v;
        }
        if let Some(v) = e.max_concurrent {
            cfg.endpoint.max_concurrent = v;
        }
        if let Some(v) = e.temperature {
            cfg.endpoint.temperature = v;
        }
        if let Some(v) = e.max_tokens {
            cfg.endpoint.max_tokens = Some(v);
        }
        if let Some(v) = e.backoff_initial_ms {
            cfg.endpoint.backoff_initial_ms = v;
        }
        let s = &file.style;
        if let Some(v) = &s.palette {
            cfg.style.palette = v.clone();
        }
        if let Some(v) = s.line_thickness_frac {
            cfg.style.line_thickness_frac = v;
        }
        if let Some(v) = s.label_scale_frac {
            cfg.style.label_scale_frac = v;
        }
        if let Some(v) = s.landmark_radius_frac {
            cfg.style.landmark_radius_frac = v;
        }
        if let Some(t) = file.prompts {
            cfg.templates = t;
        }
        if let Some(h) = file.hints {
            cfg.hints = h;
        }
    }

    // environment sits between file and flags
    if let Ok(v) = std::env::var(BASE_URL_ENV) {
        if !v.is_empty() {
            cfg.endpoint.base_url = v;
        }
    }
    if let Ok(v) = std::env::var(MODEL_ENV) {
        if !v.is_empty() {
            cfg.endpoint.model_name = v;
        }
    }
    cfg.endpoint.api_key = ApiKey::from_env();

    if let Some(v) = cli.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = cli.iou_threshold {
        cfg.iou_threshold = v;
    }
    if let Some(v) = cli.arm {
        cfg.arm = v;
    }
    if cli.align_plain {
        cfg.align_plain = true;
    }
    if let Some(v) = &cli.endpoint {
        cfg.endpoint.base_url = v.clone();
    }
    if let Some(v) = &cli.model {
        cfg.endpoint.model_name = v.clone();
    }
    if let Some(v) = cli.max_concurrent {
        cfg.endpoint.max_concurrent = v;
    }
    if let Some(path) = &cli.templates_file {
        cfg.templates = PromptTemplates::load(path).map_err(|e| anyhow::anyhow!("{e}"))?;
    }

    // the prompt arm dictates the overlay flags
    cfg.style = cfg.arm.apply_to_style(&cfg.style);
    cfg.validate()?;
    Ok(cfg)
}
