//! Ground-truth matching and metric computation.
//!
//! Metric definitions (the report carries these so numbers are never read
//! with the wrong semantics):
//! - accuracy: micro face-level — correctly labeled gt faces / all gt faces;
//!   gt faces with no matched prediction count as wrong.
//! - recall_at_1: macro-averaged per-class recall over the seven emotions;
//!   classes with zero support are excluded from the mean and listed in the
//!   report. On imbalanced data this sits below accuracy.

use crate::dataset::{DatasetManifest, DifficultyBucket};
use crate::geometry::{AnnotatedFace, BoundingBox};
use crate::parse::{Emotion, ParsedPrediction};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ACCURACY_DEFINITION: &str =
    "micro face-level accuracy: correctly labeled gt faces / all gt faces; unmatched gt faces count as wrong";
pub const RECALL_AT_1_DEFINITION: &str =
    "macro per-class recall averaged over emotions with nonzero support (zero-support classes excluded and listed)";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction references unknown image `{0}`")]
    InconsistentInputs(String),
    #[error("failed to write {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

/// One gt-to-prediction pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt_index: usize,
    pub face_id: u32,
    pub iou: f64,
}

/// Outcome of matching one image's gt boxes against its annotated faces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<u32>,
}

/// Greedy one-to-one matching by descending IoU; pairs under the threshold
/// are rejected. Ties are broken by (gt index, face id) so the pairing is
/// deterministic.
pub fn match_faces(
    gt_boxes: &[BoundingBox],
    faces: &[AnnotatedFace],
    iou_threshold: f64,
) -> MatchResult {
    let mut candidates: Vec<MatchPair> = Vec::new();
    for (gi, gt) in gt_boxes.iter().enumerate() {
        for face in faces {
            let iou = gt.iou(&face.bbox);
            if iou >= iou_threshold {
                candidates.push(MatchPair {
                    gt_index: gi,
                    face_id: face.id,
                    iou,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.gt_index.cmp(&b.gt_index))
            .then(a.face_id.cmp(&b.face_id))
    });

    let mut gt_used = vec![false; gt_boxes.len()];
    let mut pred_used: BTreeMap<u32, bool> = faces.iter().map(|f| (f.id, false)).collect();
    let mut pairs = Vec::new();
    for cand in candidates {
        if gt_used[cand.gt_index] || pred_used[&cand.face_id] {
            continue;
        }
        gt_used[cand.gt_index] = true;
        pred_used.insert(cand.face_id, true);
        pairs.push(cand);
    }
    pairs.sort_by_key(|p| p.gt_index);

    MatchResult {
        pairs,
        unmatched_gt: (0..gt_boxes.len()).filter(|&i| !gt_used[i]).collect(),
        unmatched_pred: pred_used
            .into_iter()
            .filter_map(|(id, used)| (!used).then_some(id))
            .collect(),
    }
}

/// Accuracy/recall pair for one slice of the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub accuracy: f64,
    pub recall_at_1: f64,
    pub n_faces: usize,
    pub n_images: usize,
}

/// Per-emotion recall/precision/support.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EmotionMetrics {
    pub recall: f64,
    pub precision: f64,
    pub support: usize,
}

/// 7x7 gt-by-predicted counts, plus a per-class count of gt faces that
/// received no prediction at all, so each row plus its missing count always
/// sums to that class's support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub missing: Vec<u64>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self {
            labels: Emotion::ALL.iter().map(|e| e.name().to_string()).collect(),
            counts: vec![vec![0; 7]; 7],
            missing: vec![0; 7],
        }
    }
}

/// Deterministic provenance carried inside the report. Volatile metadata
/// (timestamps) lives in the run directory, not here, so reports from
/// identical inputs are byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_digest: String,
    pub manifest_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinitions {
    pub accuracy: String,
    pub recall_at_1: String,
}

impl Default for MetricDefinitions {
    fn default() -> Self {
        Self {
            accuracy: ACCURACY_DEFINITION.to_string(),
            recall_at_1: RECALL_AT_1_DEFINITION.to_string(),
        }
    }
}

/// Full evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_definitions: MetricDefinitions,
    pub per_bucket: BTreeMap<DifficultyBucket, BucketMetrics>,
    pub overall: BucketMetrics,
    pub per_emotion: BTreeMap<Emotion, EmotionMetrics>,
    pub confusion: ConfusionMatrix,
    /// Emotions with zero gt support, excluded from the recall_at_1 mean.
    pub zero_support_emotions: Vec<Emotion>,
    /// Mean |claimed - actual| face count over images where a claim parsed.
    pub face_count_mae: Option<f64>,
    pub run: RunMetadata,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    correct: usize,
    total: usize,
    /// per-class (correct, support) indexed by emotion
    per_class: [(usize, usize); 7],
}

impl Tally {
    fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn macro_recall(&self) -> f64 {
        let present: Vec<f64> = self
            .per_class
            .iter()
            .filter(|(_, support)| *support > 0)
            .map(|&(correct, support)| correct as f64 / support as f64)
            .collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

/// Scores parsed predictions against the manifest.
///
/// `matches` carries the geometry pairing per image (gt index -> rendered
/// face id). Images with no prediction entry score every face as wrong.
/// Prediction or match keys that name unknown images are rejected.
pub fn score(
    manifest: &DatasetManifest,
    predictions: &BTreeMap<String, ParsedPrediction>,
    matches: &BTreeMap<String, MatchResult>,
    run: RunMetadata,
) -> Result<EvalReport, EvalError> {
    for key in predictions.keys().chain(matches.keys()) {
        if !manifest.entries.iter().any(|e| &e.image_path == key) {
            return Err(EvalError::InconsistentInputs(key.clone()));
        }
    }

    let mut overall = Tally::default();
    let mut per_bucket: BTreeMap<DifficultyBucket, Tally> = DifficultyBucket::ALL
        .iter()
        .map(|&b| (b, Tally::default()))
        .collect();
    let mut images_per_bucket: BTreeMap<DifficultyBucket, usize> = BTreeMap::new();
    let mut confusion = ConfusionMatrix::default();
    // predicted-as-class counts for precision
    let mut predicted_as = [0usize; 7];
    let mut correct_as = [0usize; 7];
    let mut count_errors: Vec<f64> = Vec::new();

    for entry in &manifest.entries {
        let bucket = entry.bucket();
        *images_per_bucket.entry(bucket).or_default() += 1;
        let prediction = predictions.get(&entry.image_path);
        let matching = matches.get(&entry.image_path);

        if let (Some(pred), Some(claim)) = (prediction, prediction.and_then(|p| p.face_count_claim))
        {
            let _ = pred;
            count_errors.push((f64::from(claim) - entry.faces.len() as f64).abs());
        }

        for (gi, face) in entry.faces.iter().enumerate() {
            let gt = face
                .gt_emotion
                .expect("evaluation manifests carry gt_emotion on every face");
            let gi_pair = matching.and_then(|m| m.pairs.iter().find(|p| p.gt_index == gi));
            let predicted: Option<Emotion> = gi_pair
                .and_then(|pair| prediction.and_then(|p| p.per_person.get(&pair.face_id)))
                .copied();

            let tally = per_bucket.get_mut(&bucket).unwrap();
            let correct = predicted == Some(gt);
            for t in [&mut overall, tally] {
                t.total += 1;
                t.per_class[gt.index()].1 += 1;
                if correct {
                    t.correct += 1;
                    t.per_class[gt.index()].0 += 1;
                }
            }
            match predicted {
                Some(p) => {
                    confusion.counts[gt.index()][p.index()] += 1;
                    predicted_as[p.index()] += 1;
                    if correct {
                        correct_as[p.index()] += 1;
                    }
                }
                None => confusion.missing[gt.index()] += 1,
            }
        }
    }

    let bucket_metrics = |b: DifficultyBucket, t: &Tally| BucketMetrics {
        accuracy: t.accuracy(),
        recall_at_1: t.macro_recall(),
        n_faces: t.total,
        n_images: images_per_bucket.get(&b).copied().unwrap_or(0),
    };

    let per_emotion: BTreeMap<Emotion, EmotionMetrics> = Emotion::ALL
        .iter()
        .map(|&e| {
            let (correct, support) = overall.per_class[e.index()];
            let predicted = predicted_as[e.index()];
            (
                e,
                EmotionMetrics {
                    recall: if support == 0 {
                        0.0
                    } else {
                        correct as f64 / support as f64
                    },
                    precision: if predicted == 0 {
                        0.0
                    } else {
                        correct_as[e.index()] as f64 / predicted as f64
                    },
                    support,
                },
            )
        })
        .collect();

    Ok(EvalReport {
        metric_definitions: MetricDefinitions::default(),
        per_bucket: per_bucket
            .iter()
            .map(|(&b, t)| (b, bucket_metrics(b, t)))
            .collect(),
        overall: BucketMetrics {
            accuracy: overall.accuracy(),
            recall_at_1: overall.macro_recall(),
            n_faces: overall.total,
            n_images: manifest.entries.len(),
        },
        per_emotion,
        confusion,
        zero_support_emotions: Emotion::ALL
            .iter()
            .filter(|e| overall.per_class[e.index()].1 == 0)
            .copied()
            .collect(),
        face_count_mae: if count_errors.is_empty() {
            None
        } else {
            Some(count_errors.iter().sum::<f64>() / count_errors.len() as f64)
        },
        run,
    })
}

/// Which report files to write.
#[derive(Debug, Clone, Copy)]
pub struct ReportFormats {
    pub json: bool,
    pub csv: bool,
    pub plotdata: bool,
}

impl Default for ReportFormats {
    fn default() -> Self {
        Self {
            json: true,
            csv: true,
            plotdata: true,
        }
    }
}

/// Writes report.json (full), report.csv (per-bucket rows), and
/// per_emotion.plotdata (7 `label,value` recall rows). Returns the paths
/// written.
pub fn emit_report(
    report: &EvalReport,
    dir: &Path,
    formats: ReportFormats,
) -> Result<Vec<PathBuf>, EvalError> {
    let write = |path: PathBuf, content: String| -> Result<PathBuf, EvalError> {
        std::fs::write(&path, content).map_err(|e| EvalError::Io {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        Ok(path)
    };
    let mut written = Vec::new();

    if formats.json {
        let json = serde_json::to_string_pretty(report).expect("report serializes");
        written.push(write(dir.join("report.json"), json + "\n")?);
    }
    if formats.csv {
        written.push(write(dir.join("report.csv"), report_csv(report))?);
    }
    if formats.plotdata {
        let mut rows = String::new();
        for (e, m) in &report.per_emotion {
            rows.push_str(&format!("{},{}\n", e.name(), m.recall));
        }
        written.push(write(dir.join("per_emotion.plotdata"), rows)?);
    }
    Ok(written)
}

/// Per-bucket CSV mirroring the easy/medium/hard/total row layout.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("bucket,acc,r_at_1,n_faces\n");
    for b in DifficultyBucket::ALL {
        let m = report.per_bucket.get(&b).copied().unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", b.name(), m.accuracy, m.recall_at_1, m.n_faces));
    }
    out.push_str(&format!(
        "total,{},{},{}\n",
        report.overall.accuracy, report.overall.recall_at_1, report.overall.n_faces
    ));
    out
}

/// Side-by-side bucket deltas between two runs (e.g. two prompt arms).
pub fn diff_reports(a: &EvalReport, b: &EvalReport) -> String {
    let mut out = String::from("bucket,acc_a,acc_b,acc_delta,r_at_1_a,r_at_1_b,r_at_1_delta\n");
    let row = |name: &str, ma: BucketMetrics, mb: BucketMetrics| {
        format!(
            "{name},{},{},{:+},{},{},{:+}\n",
            ma.accuracy,
            mb.accuracy,
            mb.accuracy - ma.accuracy,
            ma.recall_at_1,
            mb.recall_at_1,
            mb.recall_at_1 - ma.recall_at_1
        )
    };
    for bucket in DifficultyBucket::ALL {
        let ma = a.per_bucket.get(&bucket).copied().unwrap_or_default();
        let mb = b.per_bucket.get(&bucket).copied().unwrap_or_default();
        out.push_str(&row(bucket.name(), ma, mb));
    }
    out.push_str(&row("total", a.overall, b.overall));
    out
}
