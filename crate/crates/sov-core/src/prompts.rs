//! Question construction for the two prompt modes: one group-level question,
//! or per-person questions keyed to the numbers drawn on the image.
//!
//! Every generated question embeds the closed label vocabulary exactly once
//! and asks for a fixed answer shape, so downstream parsing can assume a
//! closed world.

use crate::annotate::{RenderStyle, SovImage};
use crate::digest::sha256_hex_parts;
use crate::parse::Emotion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("face id {0} is not present on the rendered image")]
    UnknownFaceId(u32),
    #[error("per-person prompts need at least one target id")]
    EmptyTargetIds,
    #[error("template `{key}` is invalid: {detail}")]
    BadTemplate { key: String, detail: String },
    #[error("failed to read template file {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("image encoding failed: {0}")]
    Render(#[from] crate::annotate::RenderError),
}

/// Which question style is sent alongside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    PlainText,
    PerPerson,
}

/// The four run configurations compared in the ablation-style harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptArm {
    /// Raw image, group-level question.
    Baseline,
    /// Boxes only.
    Box,
    /// Boxes plus id numbers.
    BoxNumber,
    /// Boxes, numbers, and landmark dots.
    Sov,
}

impl PromptArm {
    pub const ALL: [PromptArm; 4] = [
        PromptArm::Baseline,
        PromptArm::Box,
        PromptArm::BoxNumber,
        PromptArm::Sov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptArm::Baseline => "baseline",
            PromptArm::Box => "box",
            PromptArm::BoxNumber => "box+number",
            PromptArm::Sov => "sov",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Some(PromptArm::Baseline),
            "box" => Some(PromptArm::Box),
            "box+number" | "box_number" | "boxnumber" => Some(PromptArm::BoxNumber),
            "sov" => Some(PromptArm::Sov),
            _ => None,
        }
    }

    /// Overlay flags for this arm applied on top of a base style.
    pub fn apply_to_style(self, base: &RenderStyle) -> RenderStyle {
        let (boxes, numbers, landmarks) = match self {
            PromptArm::Baseline => (false, false, false),
            PromptArm::Box => (true, false, false),
            PromptArm::BoxNumber => (true, true, false),
            PromptArm::Sov => (true, true, true),
        };
        RenderStyle {
            draw_boxes: boxes,
            draw_numbers: numbers,
            draw_landmarks: landmarks,
            ..base.clone()
        }
    }

    /// Without numbers on the image there is nothing for "Person k" to refer
    /// to, so the un-numbered arms ask the group-level question.
    pub fn mode(self) -> PromptMode {
        match self {
            PromptArm::Baseline | PromptArm::Box => PromptMode::PlainText,
            PromptArm::BoxNumber | PromptArm::Sov => PromptMode::PerPerson,
        }
    }
}

/// Question templates with `{k}` and `{vocab}` placeholders, overridable
/// from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub plain: String,
    pub per_person_line: String,
    pub per_person_footer: String,
    /// Ordered label vocabulary; the canonical seven unless overridden.
    pub vocabulary: Vec<String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            plain: "How many visible faces are in this image? For each visible face, \
                    state its emotion, choosing one of: {vocab}."
                .to_string(),
            per_person_line: "What is Person {k}'s emotion?".to_string(),
            per_person_footer: "Answer each line in the form 'Person <k>: <label>', \
                                choosing <label> only from: {vocab}."
                .to_string(),
            vocabulary: Emotion::ALL.iter().map(|e| e.name().to_string()).collect(),
        }
    }
}

impl PromptTemplates {
    pub fn load(path: &std::path::Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let templates: PromptTemplates =
            toml::from_str(&text).map_err(|e| PromptError::BadTemplate {
                key: "<file>".to_string(),
                detail: e.to_string(),
            })?;
        templates.validate()?;
        Ok(templates)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.vocabulary.is_empty() {
            return Err(PromptError::BadTemplate {
                key: "vocabulary".into(),
                detail: "must not be empty".into(),
            });
        }
        if !self.per_person_line.contains("{k}") {
            return Err(PromptError::BadTemplate {
                key: "per_person_line".into(),
                detail: "must contain the {k} placeholder".into(),
            });
        }
        Ok(())
    }

    pub fn vocab_string(&self) -> String {
        self.vocabulary.join(", ")
    }
}

/// One image+question exchange ready for dispatch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRequest {
    pub mode: PromptMode,
    pub question: String,
    /// Ids the question asks about (empty in plain-text mode).
    pub target_ids: Vec<u32>,
    /// Ids drawn on the image.
    pub face_ids: Vec<u32>,
    pub vocabulary: Vec<String>,
    /// Lossless PNG payload sent to the endpoint.
    #[serde(with = "png_base64")]
    pub image_png: Vec<u8>,
    /// Hash of `image_png`.
    pub image_digest: String,
    /// Hash of the un-annotated source raster; stable across prompt arms.
    pub source_digest: String,
    pub width: u32,
    pub height: u32,
}

mod png_base64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

impl PromptRequest {
    /// Digest binding an answer to this exact request.
    pub fn digest(&self) -> String {
        let ids = self
            .target_ids
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",");
        sha256_hex_parts(&[
            match self.mode {
                PromptMode::PlainText => b"plain",
                PromptMode::PerPerson => b"per_person",
            },
            self.question.as_bytes(),
            ids.as_bytes(),
            self.image_digest.as_bytes(),
        ])
    }
}

fn request_base(image: &SovImage) -> Result<(Vec<u8>, String, Vec<u32>), PromptError> {
    let png = image.png_bytes()?;
    let digest = crate::digest::sha256_hex(&png);
    Ok((png, digest, image.face_ids()))
}

/// Builds the group-level question. An empty or blank override is rejected
/// with a warning and the default template is used instead.
pub fn build_plain(image: &SovImage, question_override: Option<&str>) -> Result<PromptRequest, PromptError> {
    build_plain_with(&PromptTemplates::default(), image, question_override)
}

pub fn build_plain_with(
    templates: &PromptTemplates,
    image: &SovImage,
    question_override: Option<&str>,
) -> Result<PromptRequest, PromptError> {
    templates.validate()?;
    let question = match question_override {
        Some(q) if !q.trim().is_empty() => q.to_string(),
        Some(_) => {
            log::warn!("empty question override ignored; using the default template");
            templates.plain.replace("{vocab}", &templates.vocab_string())
        }
        None => templates.plain.replace("{vocab}", &templates.vocab_string()),
    };
    let (image_png, image_digest, face_ids) = request_base(image)?;
    Ok(PromptRequest {
        mode: PromptMode::PlainText,
        question,
        target_ids: Vec::new(),
        face_ids,
        vocabulary: templates.vocabulary.clone(),
        image_png,
        image_digest,
        source_digest: image.source_digest.clone(),
        width: image.width(),
        height: image.height(),
    })
}

/// Builds one question line per requested id plus a single answer-format
/// footer carrying the vocabulary.
pub fn build_per_person(image: &SovImage, ids: &[u32]) -> Result<PromptRequest, PromptError> {
    build_per_person_with(&PromptTemplates::default(), image, ids)
}

pub fn build_per_person_with(
    templates: &PromptTemplates,
    image: &SovImage,
    ids: &[u32],
) -> Result<PromptRequest, PromptError> {
    templates.validate()?;
    if ids.is_empty() {
        return Err(PromptError::EmptyTargetIds);
    }
    let rendered = image.face_ids();
    for &id in ids {
        if !rendered.contains(&id) {
            return Err(PromptError::UnknownFaceId(id));
        }
    }
    let mut lines: Vec<String> = ids
        .iter()
        .map(|id| {
            templates
                .per_person_line
                .replace("{k}", &id.to_string())
                .replace("{vocab}", &templates.vocab_string())
        })
        .collect();
    lines.push(
        templates
            .per_person_footer
            .replace("{vocab}", &templates.vocab_string()),
    );
    let (image_png, image_digest, face_ids) = request_base(image)?;
    Ok(PromptRequest {
        mode: PromptMode::PerPerson,
        question: lines.join("\n"),
        target_ids: ids.to_vec(),
        face_ids,
        vocabulary: templates.vocabulary.clone(),
        image_png,
        image_digest,
        source_digest: image.source_digest.clone(),
        width: image.width(),
        height: image.height(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{render, RenderStyle};
    use crate::geometry::{AnnotatedFace, BoundingBox};
    use image::{Rgb, RgbImage};

    fn sample_image(n_faces: u32) -> SovImage {
        let src = RgbImage::from_pixel(240, 80, Rgb([200, 200, 200]));
        let faces: Vec<AnnotatedFace> = (0..n_faces)
            .map(|i| {
                let x0 = 10.0 + f64::from(i) * 70.0;
                AnnotatedFace::new(
                    i + 1,
                    BoundingBox::new(x0, 10.0, x0 + 50.0, 70.0).unwrap(),
                    None,
                )
                .unwrap()
            })
            .collect();
        render(&src, &faces, &RenderStyle::default()).unwrap()
    }

    #[test]
    fn plain_question_contains_all_seven_labels_once() {
        let req = build_plain(&sample_image(2), None).unwrap();
        for e in Emotion::ALL {
            assert!(req.question.contains(e.name()), "missing {e}");
        }
        let vocab = PromptTemplates::default().vocab_string();
        assert_eq!(req.question.matches(&vocab).count(), 1);
        assert_eq!(req.mode, PromptMode::PlainText);
        assert!(req.target_ids.is_empty());
    }

    #[test]
    fn plain_override_is_verbatim() {
        let q = "What's emotion for those group of people?";
        let req = build_plain(&sample_image(1), Some(q)).unwrap();
        assert_eq!(req.question, q);
    }

    #[test]
    fn empty_override_falls_back_to_default() {
        let req = build_plain(&sample_image(1), Some("   ")).unwrap();
        assert!(req.question.contains("visible faces"));
    }

    #[test]
    fn per_person_single_id() {
        let req = build_per_person(&sample_image(3), &[1]).unwrap();
        let person_lines = req
            .question
            .lines()
            .filter(|l| l.contains("Person 1"))
            .count();
        assert_eq!(person_lines, 1);
        assert!(req.question.contains("What is Person 1's emotion?"));
    }

    #[test]
    fn per_person_lines_in_id_order_with_vocab_once() {
        let req = build_per_person(&sample_image(3), &[1, 2, 3]).unwrap();
        let lines: Vec<&str> = req.question.lines().collect();
        assert_eq!(lines.len(), 4); // 3 question lines + 1 footer
        assert!(lines[0].contains("Person 1"));
        assert!(lines[1].contains("Person 2"));
        assert!(lines[2].contains("Person 3"));
        let vocab = PromptTemplates::default().vocab_string();
        assert_eq!(req.question.matches(&vocab).count(), 1);
    }

    #[test]
    fn unknown_id_rejected() {
        let err = build_per_person(&sample_image(3), &[9]).unwrap_err();
        assert!(matches!(err, PromptError::UnknownFaceId(9)));
        assert!(matches!(
            build_per_person(&sample_image(3), &[]),
            Err(PromptError::EmptyTargetIds)
        ));
    }

    #[test]
    fn question_is_deterministic_and_digest_binds_request() {
        let img = sample_image(2);
        let a = build_per_person(&img, &[1, 2]).unwrap();
        let b = build_per_person(&img, &[1, 2]).unwrap();
        assert_eq!(a.question, b.question);
        assert_eq!(a.digest(), b.digest());
        let c = build_per_person(&img, &[1]).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn arm_flags_and_modes() {
        assert_eq!(PromptArm::Baseline.mode(), PromptMode::PlainText);
        assert_eq!(PromptArm::Sov.mode(), PromptMode::PerPerson);
        let base = RenderStyle::default();
        let s = PromptArm::Box.apply_to_style(&base);
        assert!(s.draw_boxes && !s.draw_numbers && !s.draw_landmarks);
        assert_eq!(PromptArm::from_name("box+number"), Some(PromptArm::BoxNumber));
        assert_eq!(PromptArm::from_name("nope"), None);
    }

    #[test]
    fn templates_round_trip_through_toml() {
        let t = PromptTemplates::default();
        let text = toml::to_string(&t).unwrap();
        let back: PromptTemplates = toml::from_str(&text).unwrap();
        assert_eq!(t, back);
        // partial file keeps defaults for the rest
        let partial: PromptTemplates = toml::from_str(r#"plain = "Describe {vocab}.""#).unwrap();
        assert_eq!(partial.plain, "Describe {vocab}.");
        assert_eq!(partial.vocabulary.len(), 7);
    }
}
