//! Facial landmark sets and the spatial-relationship ratios derived from
//! them.
//!
//! Only the five-point scheme (eyes, nose tip, mouth corners) yields
//! expression ratios; generic sets pass through for rendering only. The
//! hint is auxiliary metadata and never enters prompts by default — the
//! remote model stays the classification authority.

use crate::geometry::Point;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LandmarkError {
    #[error("a landmark set needs at least one point")]
    Empty,
    #[error("a five-point set needs exactly 5 points, got {0}")]
    WrongPointCount(usize),
    #[error("landmark coordinates must be finite")]
    NonFinite,
    #[error("unknown landmark scheme `{0}`")]
    UnknownScheme(String),
}

/// Point layout of a landmark set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkScheme {
    /// left eye, right eye, nose, mouth-left, mouth-right — in that order.
    FivePoint,
    /// Unnamed points, carried for rendering only.
    Generic(usize),
}

/// Ordered landmark points for one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLandmarks", into = "RawLandmarks")]
pub struct LandmarkSet {
    points: Vec<Point>,
    scheme: LandmarkScheme,
}

#[derive(Serialize, Deserialize)]
struct RawLandmarks {
    scheme: String,
    points: Vec<(f64, f64)>,
}

impl TryFrom<RawLandmarks> for LandmarkSet {
    type Error = LandmarkError;

    fn try_from(raw: RawLandmarks) -> Result<Self, Self::Error> {
        let points: Vec<Point> = raw.points.iter().map(|&(x, y)| Point::new(x, y)).collect();
        match raw.scheme.as_str() {
            "five_point" => LandmarkSet::five_point(points),
            "generic" => LandmarkSet::generic(points),
            other => Err(LandmarkError::UnknownScheme(other.to_string())),
        }
    }
}

impl From<LandmarkSet> for RawLandmarks {
    fn from(set: LandmarkSet) -> Self {
        RawLandmarks {
            scheme: match set.scheme {
                LandmarkScheme::FivePoint => "five_point".to_string(),
                LandmarkScheme::Generic(_) => "generic".to_string(),
            },
            points: set.points.iter().map(|p| (p.x, p.y)).collect(),
        }
    }
}

/// Named view over a five-point set.
#[derive(Debug, Clone, Copy)]
pub struct FivePointView {
    pub left_eye: Point,
    pub right_eye: Point,
    pub nose: Point,
    pub mouth_left: Point,
    pub mouth_right: Point,
}

impl LandmarkSet {
    pub fn five_point(points: Vec<Point>) -> Result<Self, LandmarkError> {
        if points.len() != 5 {
            return Err(LandmarkError::WrongPointCount(points.len()));
        }
        Self::check_finite(&points)?;
        let set = Self {
            points,
            scheme: LandmarkScheme::FivePoint,
        };
        if set.eyes_swapped() {
            // Flagged, not silently fixed: the data stays as delivered.
            log::warn!(
                "five-point landmark set has left_eye.x >= right_eye.x ({} >= {})",
                set.points[0].x,
                set.points[1].x
            );
        }
        Ok(set)
    }

    pub fn generic(points: Vec<Point>) -> Result<Self, LandmarkError> {
        if points.is_empty() {
            return Err(LandmarkError::Empty);
        }
        Self::check_finite(&points)?;
        let scheme = LandmarkScheme::Generic(points.len());
        Ok(Self { points, scheme })
    }

    fn check_finite(points: &[Point]) -> Result<(), LandmarkError> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(LandmarkError::NonFinite);
        }
        Ok(())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn scheme(&self) -> LandmarkScheme {
        self.scheme
    }

    /// Violation flag for the image-space convention left_eye.x < right_eye.x.
    pub fn eyes_swapped(&self) -> bool {
        matches!(self.scheme, LandmarkScheme::FivePoint) && self.points[0].x >= self.points[1].x
    }

    pub fn five_point_view(&self) -> Option<FivePointView> {
        match self.scheme {
            LandmarkScheme::FivePoint => Some(FivePointView {
                left_eye: self.points[0],
                right_eye: self.points[1],
                nose: self.points[2],
                mouth_left: self.points[3],
                mouth_right: self.points[4],
            }),
            LandmarkScheme::Generic(_) => None,
        }
    }
}

/// Coarse expression reading suggested by the ratios alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionHint {
    SmilingLikely,
    NeutralLikely,
    Unknown,
}

/// Scale- and translation-invariant mouth/eye geometry, all normalized by
/// the inter-ocular distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpressionRatios {
    /// Mouth-corner span over inter-ocular distance.
    pub mouth_width_ratio: f64,
    /// Signed mean mouth-corner height above the eye–nose midline; positive
    /// means the corners sit above the midline (y grows downward).
    pub mouth_corner_lift: f64,
    /// Signed vertical drop from the eye line to the mouth line.
    pub eye_mouth_vertical_ratio: f64,
}

/// Ratios plus hint for one face. Ratios are absent whenever the scheme is
/// not five-point or the geometry is degenerate, and then the hint is
/// always `Unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpressionFeatures {
    pub ratios: Option<ExpressionRatios>,
    pub hint: ExpressionHint,
}

impl ExpressionFeatures {
    fn unknown() -> Self {
        Self {
            ratios: None,
            hint: ExpressionHint::Unknown,
        }
    }
}

/// Thresholds for mapping ratios to a hint. The mapping is a heuristic of
/// this artifact; the values are config-overridable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HintThresholds {
    pub smile_min_corner_lift: f64,
    pub smile_min_mouth_width: f64,
    pub neutral_max_abs_lift: f64,
}

impl Default for HintThresholds {
    fn default() -> Self {
        Self {
            smile_min_corner_lift: 0.05,
            smile_min_mouth_width: 0.55,
            neutral_max_abs_lift: 0.05,
        }
    }
}

/// Computes expression ratios and a hint with the default thresholds.
pub fn extract_features(set: &LandmarkSet) -> ExpressionFeatures {
    extract_features_with(set, &HintThresholds::default())
}

/// Total over all valid landmark sets: non-five-point schemes and degenerate
/// geometry (zero inter-ocular distance) yield `Unknown` with no ratios
/// instead of failing.
pub fn extract_features_with(set: &LandmarkSet, thresholds: &HintThresholds) -> ExpressionFeatures {
    let Some(v) = set.five_point_view() else {
        return ExpressionFeatures::unknown();
    };
    let inter_ocular = v.left_eye.distance(v.right_eye);
    if inter_ocular == 0.0 {
        return ExpressionFeatures::unknown();
    }

    let mouth_width_ratio = v.mouth_left.distance(v.mouth_right) / inter_ocular;
    let eye_mid_y = (v.left_eye.y + v.right_eye.y) / 2.0;
    let midline_y = (eye_mid_y + v.nose.y) / 2.0;
    let mouth_mean_y = (v.mouth_left.y + v.mouth_right.y) / 2.0;
    let mouth_corner_lift = (midline_y - mouth_mean_y) / inter_ocular;
    let eye_mouth_vertical_ratio = (mouth_mean_y - eye_mid_y) / inter_ocular;

    let hint = if mouth_corner_lift > thresholds.smile_min_corner_lift
        && mouth_width_ratio > thresholds.smile_min_mouth_width
    {
        ExpressionHint::SmilingLikely
    } else if mouth_corner_lift.abs() <= thresholds.neutral_max_abs_lift {
        ExpressionHint::NeutralLikely
    } else {
        ExpressionHint::Unknown
    };

    ExpressionFeatures {
        ratios: Some(ExpressionRatios {
            mouth_width_ratio,
            mouth_corner_lift,
            eye_mouth_vertical_ratio,
        }),
        hint,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    fn sample_five() -> LandmarkSet {
        LandmarkSet::five_point(vec![
            p(0.0, 0.0),
            p(10.0, 0.0),
            p(5.0, 5.0),
            p(2.0, 9.0),
            p(8.0, 9.0),
        ])
        .unwrap()
    }

    #[test]
    fn mouth_width_ratio_hand_example() {
        let f = extract_features(&sample_five());
        let r = f.ratios.unwrap();
        assert!((r.mouth_width_ratio - 0.6).abs() < 1e-12);
        // corners sit far below the eye–nose midline
        assert!(r.mouth_corner_lift < 0.0);
        assert!((r.eye_mouth_vertical_ratio - 0.9).abs() < 1e-12);
    }

    #[test]
    fn uniform_scale_leaves_ratios_unchanged() {
        let base = extract_features(&sample_five()).ratios.unwrap();
        let scaled = LandmarkSet::five_point(
            sample_five()
                .points()
                .iter()
                .map(|q| p(q.x * 3.0, q.y * 3.0))
                .collect(),
        )
        .unwrap();
        let r = extract_features(&scaled).ratios.unwrap();
        assert!((r.mouth_width_ratio - base.mouth_width_ratio).abs() < 1e-12);
        assert!((r.mouth_corner_lift - base.mouth_corner_lift).abs() < 1e-12);
        assert!((r.eye_mouth_vertical_ratio - base.eye_mouth_vertical_ratio).abs() < 1e-12);
    }

    #[test]
    fn generic_scheme_has_no_ratios() {
        let pts: Vec<Point> = (0..68).map(|i| p(f64::from(i), f64::from(i % 7))).collect();
        let set = LandmarkSet::generic(pts).unwrap();
        let f = extract_features(&set);
        assert_eq!(f.hint, ExpressionHint::Unknown);
        assert!(f.ratios.is_none());
    }

    #[test]
    fn degenerate_inter_ocular_distance_is_unknown() {
        let set = LandmarkSet::five_point(vec![
            p(5.0, 5.0),
            p(5.0, 5.0),
            p(5.0, 8.0),
            p(3.0, 10.0),
            p(7.0, 10.0),
        ])
        .unwrap();
        let f = extract_features(&set);
        assert_eq!(f.hint, ExpressionHint::Unknown);
        assert!(f.ratios.is_none());
    }

    #[test]
    fn smiling_hint_fires_on_lifted_wide_mouth() {
        // corners above the eye–nose midline and a wide mouth
        let set = LandmarkSet::five_point(vec![
            p(0.0, 10.0),
            p(10.0, 10.0),
            p(5.0, 16.0),
            p(2.0, 11.0),
            p(8.0, 11.0),
        ])
        .unwrap();
        // midline y = 13, mouth mean y = 11 -> lift 0.2; width 0.6
        let f = extract_features(&set);
        assert_eq!(f.hint, ExpressionHint::SmilingLikely);
    }

    #[test]
    fn neutral_hint_on_flat_mouth() {
        let set = LandmarkSet::five_point(vec![
            p(0.0, 10.0),
            p(10.0, 10.0),
            p(5.0, 14.0),
            p(3.0, 12.0),
            p(7.0, 12.0),
        ])
        .unwrap();
        // midline y = 12, mouth mean y = 12 -> lift 0.0
        let f = extract_features(&set);
        assert_eq!(f.hint, ExpressionHint::NeutralLikely);
    }

    #[test]
    fn five_point_requires_five() {
        assert_eq!(
            LandmarkSet::five_point(vec![p(0.0, 0.0)]).unwrap_err(),
            LandmarkError::WrongPointCount(1)
        );
        assert_eq!(
            LandmarkSet::generic(vec![]).unwrap_err(),
            LandmarkError::Empty
        );
        assert_eq!(
            LandmarkSet::generic(vec![p(f64::INFINITY, 0.0)]).unwrap_err(),
            LandmarkError::NonFinite
        );
    }

    #[test]
    fn swapped_eyes_flagged_not_fixed() {
        let set = LandmarkSet::five_point(vec![
            p(10.0, 0.0),
            p(0.0, 0.0),
            p(5.0, 5.0),
            p(2.0, 9.0),
            p(8.0, 9.0),
        ])
        .unwrap();
        assert!(set.eyes_swapped());
        assert_eq!(set.points()[0], p(10.0, 0.0));
    }

    #[test]
    fn serde_round_trip_and_scheme_tags() {
        let set = sample_five();
        let json = serde_json::to_string(&set).unwrap();
        assert!(json.contains("five_point"));
        let back: LandmarkSet = serde_json::from_str(&json).unwrap();
        assert_eq!(set, back);

        let bad = r#"{"scheme":"five_point","points":[[0,0],[1,1]]}"#;
        assert!(serde_json::from_str::<LandmarkSet>(bad).is_err());
    }
}
