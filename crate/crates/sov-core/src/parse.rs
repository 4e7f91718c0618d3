//! Free-text answer parsing: per-person emotion predictions plus a face-count
//! claim, extracted from whatever a vision-language model returns.
//!
//! Parsing is total — garbage never fails, it just lands in
//! `unparsed_spans` and is scored as wrong downstream.

use crate::client::ModelAnswer;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

/// The closed seven-class vocabulary. Case-insensitive canonicalization
/// happens only at the parsing boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emotion {
    Angry,
    Disgust,
    Fear,
    Happy,
    Sad,
    Surprise,
    Neutral,
}

impl Emotion {
    pub const ALL: [Emotion; 7] = [
        Emotion::Angry,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Surprise,
        Emotion::Neutral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "Angry",
            Emotion::Disgust => "Disgust",
            Emotion::Fear => "Fear",
            Emotion::Happy => "Happy",
            Emotion::Sad => "Sad",
            Emotion::Surprise => "Surprise",
            Emotion::Neutral => "Neutral",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    /// Case-insensitive canonical-name lookup.
    pub fn from_name_ci(s: &str) -> Option<Emotion> {
        Self::ALL
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .copied()
    }

    /// A deterministic wrong answer, used by the adversarial mock.
    pub fn misclassified(self) -> Emotion {
        Self::ALL[(self.index() + 1) % Self::ALL.len()]
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::from_name_ci(s.trim()).ok_or_else(|| format!("unknown emotion label `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum SynonymError {
    #[error("line {line}: expected `surface -> Label`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("line {line}: unknown canonical label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("surface form `{surface}` maps to both {first} and {second}")]
    ConflictingMapping {
        surface: String,
        first: Emotion,
        second: Emotion,
    },
}

/// Surface-form table mapping free-text phrases to canonical emotions.
///
/// File format: one `surface_form -> CanonicalLabel` per line, `#` comments,
/// UTF-8. Each surface form must map to exactly one emotion; conflicts are
/// rejected at load.
#[derive(Debug, Clone)]
pub struct SynonymTable {
    /// phrase (lowercased words) -> emotion, longest phrases first
    phrases: Vec<(Vec<String>, Emotion)>,
}

impl SynonymTable {
    pub fn parse(text: &str) -> Result<Self, SynonymError> {
        let mut seen: BTreeMap<String, Emotion> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((surface, label)) = line.split_once("->") else {
                return Err(SynonymError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let surface = surface.trim().to_lowercase();
            let label = label.trim();
            if surface.is_empty() {
                return Err(SynonymError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            let emotion =
                Emotion::from_name_ci(label).ok_or_else(|| SynonymError::UnknownLabel {
                    line: i + 1,
                    label: label.to_string(),
                })?;
            // A surface that spells a canonical name must agree with it.
            if let Some(canon) = Emotion::from_name_ci(&surface) {
                if canon != emotion {
                    return Err(SynonymError::ConflictingMapping {
                        surface,
                        first: canon,
                        second: emotion,
                    });
                }
            }
            if let Some(&prev) = seen.get(&surface) {
                if prev != emotion {
                    return Err(SynonymError::ConflictingMapping {
                        surface,
                        first: prev,
                        second: emotion,
                    });
                }
                continue;
            }
            seen.insert(surface, emotion);
        }
        let mut phrases: Vec<(Vec<String>, Emotion)> = seen
            .into_iter()
            .map(|(s, e)| (s.split_whitespace().map(str::to_string).collect(), e))
            .collect();
        phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        Ok(Self { phrases })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// The synonym table bundled with the crate.
pub fn default_synonyms() -> &'static SynonymTable {
    static TABLE: OnceLock<SynonymTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        SynonymTable::parse(include_str!("../assets/synonyms.txt"))
            .expect("bundled synonym table must be valid")
    })
}

/// A synonym-table hit recorded during parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymHit {
    pub surface: String,
    pub emotion: Emotion,
}

/// Structured reading of one model answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    /// face id -> predicted emotion; later mentions overwrite earlier ones
    /// (the overwritten mention is recorded in `unparsed_spans`).
    pub per_person: BTreeMap<u32, Emotion>,
    pub face_count_claim: Option<u32>,
    /// Text the parser could not interpret, plus overwrite/ambiguity notes.
    pub unparsed_spans: Vec<String>,
    /// Non-canonical surface forms that were normalized via the table.
    pub synonym_hits: Vec<SynonymHit>,
    /// Ids that were parsed but are not in the expected id set.
    pub flagged_ids: Vec<u32>,
}

/// Parsing knobs; the ordered-alignment fallback for id-free plain-text
/// answers is a declared heuristic and stays off by default.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub align_plain: bool,
}

fn person_mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:person|face)\s*#?\s*(\d{1,4})\b").unwrap())
}

fn list_item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*]\s*)?(\d{1,4})[.):]\s*(.+)$").unwrap())
}

fn count_before_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(\d{1,4})\s+(?:visible\s+)?faces?\b").unwrap())
}

fn count_after_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bfaces\b[^0-9\n.]{0,40}?(\d{1,4})").unwrap())
}

/// Lowercased alphanumeric words of a span.
fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// All emotion mentions in a span, in order: canonical names first at each
/// position, then longest synonym phrase.
fn emotion_mentions(span: &str, table: &SynonymTable) -> Vec<(Emotion, String, bool)> {
    let words = words_of(span);
    let mut found = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if let Some(e) = Emotion::from_name_ci(&words[i]) {
            found.push((e, words[i].clone(), false));
            i += 1;
            continue;
        }
        let mut matched = None;
        for (phrase, emotion) in &table.phrases {
            if phrase.len() <= words.len() - i && words[i..i + phrase.len()] == phrase[..] {
                matched = Some((*emotion, phrase.join(" "), phrase.len()));
                break;
            }
        }
        if let Some((e, surface, len)) = matched {
            found.push((e, surface, true));
            i += len;
        } else {
            i += 1;
        }
    }
    found
}

/// Parses answer text against the ids that were actually rendered.
pub fn parse_text(text: &str, expected_ids: &[u32]) -> ParsedPrediction {
    parse_text_with(text, expected_ids, default_synonyms(), ParseOptions::default())
}

/// [`parse_text`] with an explicit synonym table and options.
pub fn parse_text_with(
    text: &str,
    expected_ids: &[u32],
    table: &SynonymTable,
    options: ParseOptions,
) -> ParsedPrediction {
    let mut pred = ParsedPrediction::default();
    let line_index = |offset: usize| text[..offset].bytes().filter(|&b| b == b'\n').count();
    let line_count = text.lines().count();
    let mut consumed = vec![false; line_count.max(1)];

    let mentions: Vec<(usize, usize, u32)> = person_mention_re()
        .captures_iter(text)
        .filter_map(|caps| {
            let m = caps.get(0).unwrap();
            caps[1].parse::<u32>().ok().map(|id| (m.start(), m.end(), id))
        })
        .collect();
    let inside_mention =
        |range: std::ops::Range<usize>| mentions.iter().any(|&(s, e, _)| range.start < e && range.end > s);

    // face-count claim: integer adjacent to a "... faces" phrase, but never
    // the id digits of a person/face mention
    let count_match = count_before_re()
        .captures_iter(text)
        .chain(count_after_re().captures_iter(text))
        .find(|caps| !inside_mention(caps.get(1).unwrap().range()));
    if let Some(caps) = count_match {
        if let Ok(n) = caps[1].parse::<u32>() {
            pred.face_count_claim = Some(n);
            let at = caps.get(0).unwrap().start();
            if let Some(slot) = consumed.get_mut(line_index(at)) {
                *slot = true;
            }
        }
    }

    let record = |pred: &mut ParsedPrediction, id: u32, span: &str| -> bool {
        let mentions = emotion_mentions(span, table);
        let Some((emotion, surface, via_table)) = mentions.first().cloned() else {
            return false;
        };
        if via_table {
            pred.synonym_hits.push(SynonymHit {
                surface: surface.clone(),
                emotion,
            });
        }
        let distinct_rest: Vec<Emotion> = mentions
            .iter()
            .skip(1)
            .map(|(e, _, _)| *e)
            .filter(|e| *e != emotion)
            .collect();
        if !distinct_rest.is_empty() {
            pred.unparsed_spans.push(format!(
                "ambiguous labels for face {id}: kept {emotion}, ignored {}",
                distinct_rest
                    .iter()
                    .map(|e| e.name())
                    .collect::<Vec<_>>()
                    .join("/")
            ));
        }
        if let Some(old) = pred.per_person.insert(id, emotion) {
            if old != emotion {
                pred.unparsed_spans
                    .push(format!("face {id}: {old} overwritten by later mention {emotion}"));
            }
        }
        true
    };

    // "Person k" / "Face k" mentions; the label is whatever follows up to the
    // end of the sentence, line, or next mention.
    for (i, &(start, end, id)) in mentions.iter().enumerate() {
        let hard_stop = text[end..]
            .find(['\n', '.', ';'])
            .map(|off| end + off)
            .unwrap_or(text.len());
        let next_mention = mentions
            .get(i + 1)
            .map(|&(s, _, _)| s)
            .unwrap_or(text.len());
        let region = &text[end..hard_stop.min(next_mention)];
        if id == 0 || !record(&mut pred, id, region) {
            let shown: String = text[start..hard_stop.min(next_mention)].trim().to_string();
            if !shown.is_empty() {
                pred.unparsed_spans.push(shown);
            }
        }
        consumed[line_index(start)] = true;
    }

    // numbered-list lines: "3. Happy", "2) smiling", "- 1: Sad"
    for (li, line) in text.lines().enumerate() {
        if consumed[li] {
            continue;
        }
        if let Some(caps) = list_item_re().captures(line) {
            if let Ok(id) = caps[1].parse::<u32>() {
                if id > 0 && record(&mut pred, id, &caps[2]) {
                    consumed[li] = true;
                }
            }
        }
    }

    // optional ordered-alignment fallback for id-free answers
    if options.align_plain && pred.per_person.is_empty() && !expected_ids.is_empty() {
        let mut ordered_ids: Vec<u32> = expected_ids.to_vec();
        ordered_ids.sort_unstable();
        let mut next = 0usize;
        for (li, line) in text.lines().enumerate() {
            if consumed[li] || next >= ordered_ids.len() {
                continue;
            }
            if line.bytes().any(|b| b.is_ascii_digit()) {
                continue;
            }
            if record(&mut pred, ordered_ids[next], line) {
                consumed[li] = true;
                next += 1;
            }
        }
    }

    for (li, line) in text.lines().enumerate() {
        if !consumed[li] && !line.trim().is_empty() {
            pred.unparsed_spans.push(line.trim().to_string());
        }
    }

    pred.flagged_ids = pred
        .per_person
        .keys()
        .copied()
        .filter(|id| !expected_ids.contains(id))
        .collect();
    pred
}

/// Parses a model answer. Total: any text yields a prediction.
pub fn parse(answer: &ModelAnswer, expected_ids: &[u32]) -> ParsedPrediction {
    parse_text(&answer.raw_text, expected_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_person_lines() {
        let p = parse_text("Person 1: Happy\nPerson 2: Neutral", &[1, 2]);
        assert_eq!(p.per_person.len(), 2);
        assert_eq!(p.per_person[&1], Emotion::Happy);
        assert_eq!(p.per_person[&2], Emotion::Neutral);
        assert!(p.face_count_claim.is_none());
        assert!(p.flagged_ids.is_empty());
        assert!(p.unparsed_spans.is_empty());
        assert!(p.synonym_hits.is_empty());
    }

    #[test]
    fn narrative_with_count_and_synonym() {
        let p = parse_text(
            "There are 18 visible faces. Person 3 appears smiling or positive.",
            &[1, 2, 3],
        );
        assert_eq!(p.face_count_claim, Some(18));
        assert_eq!(p.per_person[&3], Emotion::Happy);
        assert_eq!(p.synonym_hits.len(), 1);
        assert_eq!(p.synonym_hits[0].surface, "smiling");
    }

    #[test]
    fn refusal_is_all_unparsed() {
        let p = parse_text("I cannot determine emotions.", &[1]);
        assert!(p.per_person.is_empty());
        assert_eq!(p.unparsed_spans.len(), 1);
        assert!(p.face_count_claim.is_none());
    }

    #[test]
    fn parse_is_idempotent_on_canonical_labels() {
        for e in Emotion::ALL {
            let text = format!("Person 1: {e}");
            let p = parse_text(&text, &[1]);
            assert_eq!(p.per_person[&1], e);
            assert!(p.synonym_hits.is_empty(), "{e} must be canonical");
        }
    }

    #[test]
    fn unexpected_ids_kept_but_flagged() {
        let p = parse_text("Person 9: Sad", &[1, 2, 3]);
        assert_eq!(p.per_person[&9], Emotion::Sad);
        assert_eq!(p.flagged_ids, vec![9]);
    }

    #[test]
    fn later_mention_overwrites_with_trail() {
        let p = parse_text("Person 1: Happy\nPerson 1: Sad", &[1]);
        assert_eq!(p.per_person[&1], Emotion::Sad);
        assert!(p
            .unparsed_spans
            .iter()
            .any(|s| s.contains("overwritten")));
    }

    #[test]
    fn ambiguous_labels_take_first_and_flag() {
        let p = parse_text("Person 2 looks happy or surprised", &[1, 2]);
        assert_eq!(p.per_person[&2], Emotion::Happy);
        assert!(p.unparsed_spans.iter().any(|s| s.contains("ambiguous")));
    }

    #[test]
    fn numbered_list_form() {
        let p = parse_text("1. Happy\n2. scared\n3. Neutral", &[1, 2, 3]);
        assert_eq!(p.per_person[&1], Emotion::Happy);
        assert_eq!(p.per_person[&2], Emotion::Fear);
        assert_eq!(p.per_person[&3], Emotion::Neutral);
    }

    #[test]
    fn alignment_heuristic_is_off_by_default() {
        let text = "happy\nsad";
        let off = parse_text(text, &[1, 2]);
        assert!(off.per_person.is_empty());
        let on = parse_text_with(
            text,
            &[1, 2],
            default_synonyms(),
            ParseOptions { align_plain: true },
        );
        assert_eq!(on.per_person[&1], Emotion::Happy);
        assert_eq!(on.per_person[&2], Emotion::Sad);
    }

    #[test]
    fn synonym_table_conflicts_rejected() {
        let err = SynonymTable::parse("smiling -> Happy\nsmiling -> Sad").unwrap_err();
        assert!(matches!(err, SynonymError::ConflictingMapping { .. }));
        let err = SynonymTable::parse("happy -> Sad").unwrap_err();
        assert!(matches!(err, SynonymError::ConflictingMapping { .. }));
        assert!(SynonymTable::parse("no match here").is_err());
        assert!(SynonymTable::parse("x -> NotAnEmotion").is_err());
    }

    #[test]
    fn bundled_table_loads() {
        assert!(default_synonyms().len() > 40);
    }

    #[test]
    fn count_phrasing_variants() {
        assert_eq!(
            parse_text("I can see 5 faces in the photo.", &[]).face_count_claim,
            Some(5)
        );
        assert_eq!(
            parse_text("Visible faces: 12", &[]).face_count_claim,
            Some(12)
        );
        assert_eq!(
            parse_text("There are 3 visible faces.", &[]).face_count_claim,
            Some(3)
        );
        assert_eq!(parse_text("No faces mentioned here", &[]).face_count_claim, None);
    }
}
