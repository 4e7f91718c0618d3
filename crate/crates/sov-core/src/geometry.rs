//! Bounding-box arithmetic and the face overlap-handling pass that turns raw
//! detections into a numbered, conflict-free face set.
//!
//! Overlap between two boxes is measured as intersection area over the
//! *smaller* box's area, not IoU, so a face fully contained in another scores
//! 1.0. Conflicts are resolved by area priority: larger faces win, smaller
//! conflicting faces are dropped.

use crate::landmarks::LandmarkSet;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Fraction of the box size a landmark may sit outside its face box before
/// ingestion rejects the detection.
pub const LANDMARK_MARGIN_FRAC: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: {4}")]
    InvalidBox(f64, f64, f64, f64, &'static str),
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("landmark ({0}, {1}) lies more than 10% of the box size outside its face box")]
    LandmarkOutsideMargin(f64, f64),
    #[error("landmark ({0}, {1}) lies outside the {2}x{3} image")]
    LandmarkOutsideImage(f64, f64, u32, u32),
    #[error("epsilon must be strictly between 0 and 1, got {0}")]
    InvalidEpsilon(f64),
    #[error("face id must be >= 1")]
    ZeroFaceId,
    #[error("stored face area {stored} does not match its box area {computed}")]
    AreaMismatch { stored: f64, computed: f64 },
}

/// A 2D pixel coordinate, origin at the image top-left, y growing downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Axis-aligned face box in pixel coordinates, origin top-left.
///
/// Coordinates are kept real-valued end to end; rounding to pixels happens
/// only when drawing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max)
    }
}

impl BoundingBox {
    /// Validates finiteness, non-negative coordinates, and strictly positive
    /// area. Degenerate boxes are rejected here rather than dropped later so
    /// that upstream detector bugs surface at ingestion.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidBox(
                x_min,
                y_min,
                x_max,
                y_max,
                "coordinates must be finite",
            ));
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(GeometryError::InvalidBox(
                x_min,
                y_min,
                x_max,
                y_max,
                "coordinates must be non-negative",
            ));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(GeometryError::InvalidBox(
                x_min,
                y_min,
                x_max,
                y_max,
                "box must have strictly positive width and height",
            ));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diagonal(&self) -> f64 {
        (self.width().powi(2) + self.height().powi(2)).sqrt()
    }

    /// Box area in pixels².
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of the intersection rectangle, zero when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Intersection area over the smaller box's area. Saturates at 1.0 when
    /// one box contains the other; this is deliberately not IoU.
    pub fn overlap_ratio(&self, other: &BoundingBox) -> f64 {
        self.intersection_area(other) / self.area().min(other.area())
    }

    /// Intersection over union, used for ground-truth matching.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        inter / (self.area() + other.area() - inter)
    }

    /// True when `other` lies entirely inside `self` (boundaries allowed).
    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

fn default_confidence() -> f64 {
    1.0
}

/// One raw face detection as produced by an external detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct FaceDetection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Deserialize)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    #[serde(default = "default_confidence")]
    confidence: f64,
    #[serde(default)]
    landmarks: Option<LandmarkSet>,
}

impl TryFrom<RawDetection> for FaceDetection {
    type Error = GeometryError;

    fn try_from(raw: RawDetection) -> Result<Self, Self::Error> {
        FaceDetection::new(raw.bbox, raw.confidence, raw.landmarks)
    }
}

impl FaceDetection {
    pub fn new(
        bbox: BoundingBox,
        confidence: f64,
        landmarks: Option<LandmarkSet>,
    ) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) || !confidence.is_finite() {
            return Err(GeometryError::ConfidenceOutOfRange(confidence));
        }
        if let Some(set) = &landmarks {
            // Detectors sometimes place points slightly outside the box;
            // tolerate up to 10% of the box size, reject beyond.
            let mx = bbox.width() * LANDMARK_MARGIN_FRAC;
            let my = bbox.height() * LANDMARK_MARGIN_FRAC;
            for p in set.points() {
                if p.x < bbox.x_min - mx
                    || p.x > bbox.x_max + mx
                    || p.y < bbox.y_min - my
                    || p.y > bbox.y_max + my
                {
                    return Err(GeometryError::LandmarkOutsideMargin(p.x, p.y));
                }
            }
        }
        Ok(Self {
            bbox,
            confidence,
            landmarks,
        })
    }

    /// Checks that every landmark point lies inside the image raster. Image
    /// dimensions are only known once the image file is opened, so this runs
    /// in the pipeline rather than at manifest load.
    pub fn validate_within_image(&self, width: u32, height: u32) -> Result<(), GeometryError> {
        if let Some(set) = &self.landmarks {
            for p in set.points() {
                if p.x < 0.0 || p.x > f64::from(width) || p.y < 0.0 || p.y > f64::from(height) {
                    return Err(GeometryError::LandmarkOutsideImage(p.x, p.y, width, height));
                }
            }
        }
        Ok(())
    }
}

/// A retained face with its display id (1-based, dense per image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAnnotated")]
pub struct AnnotatedFace {
    pub id: u32,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<LandmarkSet>,
    /// Cached `bbox.area()`.
    pub area: f64,
}

#[derive(Deserialize)]
struct RawAnnotated {
    id: u32,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    #[serde(default)]
    landmarks: Option<LandmarkSet>,
    area: f64,
}

impl TryFrom<RawAnnotated> for AnnotatedFace {
    type Error = GeometryError;

    fn try_from(raw: RawAnnotated) -> Result<Self, Self::Error> {
        let face = AnnotatedFace::new(raw.id, raw.bbox, raw.landmarks)?;
        let rel = (raw.area - face.area).abs() / face.area;
        if rel > 1e-9 {
            return Err(GeometryError::AreaMismatch {
                stored: raw.area,
                computed: face.area,
            });
        }
        Ok(face)
    }
}

impl AnnotatedFace {
    pub fn new(
        id: u32,
        bbox: BoundingBox,
        landmarks: Option<LandmarkSet>,
    ) -> Result<Self, GeometryError> {
        if id == 0 {
            return Err(GeometryError::ZeroFaceId);
        }
        Ok(Self {
            id,
            bbox,
            landmarks,
            area: bbox.area(),
        })
    }
}

/// Deterministic processing priority: larger area first, ties broken by the
/// full coordinate tuple and finally the input index, so the retained output
/// depends on the input *set* rather than its ordering.
fn candidate_order(a: &FaceDetection, ai: usize, b: &FaceDetection, bi: usize) -> Ordering {
    b.bbox
        .area()
        .total_cmp(&a.bbox.area())
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
        .then(ai.cmp(&bi))
}

fn check_epsilon(epsilon: f64) -> Result<(), GeometryError> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(GeometryError::InvalidEpsilon(epsilon));
    }
    Ok(())
}

/// Resolves overlapping detections into a retained, id-numbered face set.
///
/// Candidates are processed in descending area order; a candidate is retained
/// iff its overlap ratio with every already-retained face stays at or below
/// `epsilon`. Retained faces receive ids 1..n in retention order, so the
/// largest face is always id 1. An empty input yields an empty list.
pub fn resolve_overlaps(
    detections: &[FaceDetection],
    epsilon: f64,
) -> Result<Vec<AnnotatedFace>, GeometryError> {
    check_epsilon(epsilon)?;
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| candidate_order(&detections[a], a, &detections[b], b));

    let mut retained: Vec<AnnotatedFace> = Vec::new();
    for idx in order {
        let cand = &detections[idx];
        let conflict = retained
            .iter()
            .any(|kept| kept.bbox.overlap_ratio(&cand.bbox) > epsilon);
        if !conflict {
            let id = retained.len() as u32 + 1;
            retained.push(AnnotatedFace::new(id, cand.bbox, cand.landmarks.clone())?);
        }
    }
    Ok(retained)
}

/// Naive quadratic reference for [`resolve_overlaps`], kept as an independent
/// cross-check. Instead of sorting once, it repeatedly scans all undecided
/// detections for the highest-priority one, keeps it, and eliminates every
/// undecided detection in conflict with it via an explicit smaller-face
/// comparison.
pub fn brute_force_resolve(
    detections: &[FaceDetection],
    epsilon: f64,
) -> Result<Vec<AnnotatedFace>, GeometryError> {
    check_epsilon(epsilon)?;
    let mut undecided: Vec<usize> = (0..detections.len()).collect();
    let mut retained: Vec<AnnotatedFace> = Vec::new();

    while !undecided.is_empty() {
        let mut best = undecided[0];
        for &i in &undecided[1..] {
            if candidate_order(&detections[i], i, &detections[best], best) == Ordering::Less {
                best = i;
            }
        }
        let kept = &detections[best];
        let id = retained.len() as u32 + 1;
        retained.push(AnnotatedFace::new(id, kept.bbox, kept.landmarks.clone())?);

        undecided.retain(|&i| {
            if i == best {
                return false;
            }
            let other = &detections[i];
            if kept.bbox.overlap_ratio(&other.bbox) > epsilon {
                // Conflicting pair: the larger face survives. `best` was
                // selected as the maximum, so the other face can never be
                // strictly larger.
                let other_is_larger = other.bbox.area() > kept.bbox.area();
                debug_assert!(!other_is_larger);
                other_is_larger
            } else {
                true
            }
        });
    }
    Ok(retained)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(x0: f64, y0: f64, x1: f64, y1: f64) -> FaceDetection {
        FaceDetection::new(bx(x0, y0, x1, y1), 1.0, None).unwrap()
    }

    #[test]
    fn area_unit_and_square() {
        assert_eq!(bx(0.0, 0.0, 10.0, 10.0).area(), 100.0);
        assert_eq!(bx(0.0, 0.0, 1.0, 1.0).area(), 1.0);
    }

    #[test]
    fn area_subpixel_box() {
        // 5.0 x 6.0 box; cross-checked by the half-pixel enumeration oracle
        // in tests/geometry_props.rs.
        assert_eq!(bx(2.5, 3.0, 7.5, 9.0).area(), 30.0);
    }

    #[test]
    fn intersection_disjoint_identical_partial() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.intersection_area(&bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(a.intersection_area(&a), 100.0);
        assert_eq!(a.intersection_area(&bx(5.0, 5.0, 15.0, 15.0)), 25.0);
    }

    #[test]
    fn overlap_ratio_uses_smaller_area() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        // containment saturates at 1
        assert_eq!(a.overlap_ratio(&bx(2.0, 2.0, 8.0, 8.0)), 1.0);
        assert_eq!(a.overlap_ratio(&bx(5.0, 5.0, 15.0, 15.0)), 0.25);
        // equal areas, half overlap
        assert_eq!(a.overlap_ratio(&bx(0.0, 0.0, 20.0, 5.0)), 0.5);
    }

    #[test]
    fn rejects_degenerate_and_negative_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(BoundingBox::new(5.0, 5.0, 5.0, 5.0).is_err());
        assert!(BoundingBox::new(-1.0, 0.0, 10.0, 10.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 10.0).is_err());
        assert!(BoundingBox::new(10.0, 0.0, 5.0, 10.0).is_err());
    }

    #[test]
    fn rejects_bad_confidence() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        assert!(matches!(
            FaceDetection::new(b, 1.5, None),
            Err(GeometryError::ConfidenceOutOfRange(_))
        ));
        assert!(FaceDetection::new(b, -0.1, None).is_err());
        assert!(FaceDetection::new(b, f64::NAN, None).is_err());
    }

    #[test]
    fn resolve_disjoint_keeps_both() {
        let faces = resolve_overlaps(&[det(0.0, 0.0, 10.0, 10.0), det(20.0, 0.0, 30.0, 10.0)], 0.5)
            .unwrap();
        assert_eq!(faces.len(), 2);
        assert_eq!(faces[0].id, 1);
        assert_eq!(faces[0].bbox, bx(0.0, 0.0, 10.0, 10.0));
        assert_eq!(faces[1].id, 2);
    }

    #[test]
    fn resolve_nested_drops_smaller() {
        let faces =
            resolve_overlaps(&[det(0.0, 0.0, 10.0, 10.0), det(2.0, 2.0, 8.0, 8.0)], 0.5).unwrap();
        assert_eq!(faces.len(), 1);
        assert_eq!(faces[0].id, 1);
        assert_eq!(faces[0].bbox, bx(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn resolve_transitive_conflict_checks_all_retained() {
        // A and B overlap mildly; C sits inside B. C must be checked against
        // B (not just the previously processed face), so it is dropped.
        let a = det(0.0, 0.0, 12.0, 12.0);
        let b = det(10.0, 0.0, 22.0, 12.0);
        let c = det(11.0, 1.0, 21.0, 11.0);
        let faces = resolve_overlaps(&[a.clone(), b.clone(), c], 0.3).unwrap();
        assert_eq!(faces.len(), 2);
        // equal areas (144), tie broken by x_min
        assert_eq!(faces[0].bbox, a.bbox);
        assert_eq!(faces[0].id, 1);
        assert_eq!(faces[1].bbox, b.bbox);
        assert_eq!(faces[1].id, 2);
    }

    #[test]
    fn resolve_empty_input_is_empty_output() {
        assert!(resolve_overlaps(&[], 0.5).unwrap().is_empty());
        assert!(brute_force_resolve(&[], 0.5).unwrap().is_empty());
    }

    #[test]
    fn resolve_rejects_bad_epsilon() {
        for eps in [0.0, 1.0, -0.3, 1.7, f64::NAN] {
            assert!(matches!(
                resolve_overlaps(&[det(0.0, 0.0, 1.0, 1.0)], eps),
                Err(GeometryError::InvalidEpsilon(_))
            ));
        }
    }

    #[test]
    fn brute_force_agrees_on_hand_fixtures() {
        let cases: Vec<(Vec<FaceDetection>, f64)> = vec![
            (
                vec![det(0.0, 0.0, 10.0, 10.0), det(20.0, 0.0, 30.0, 10.0)],
                0.5,
            ),
            (
                vec![det(0.0, 0.0, 10.0, 10.0), det(2.0, 2.0, 8.0, 8.0)],
                0.5,
            ),
            (
                vec![
                    det(0.0, 0.0, 12.0, 12.0),
                    det(10.0, 0.0, 22.0, 12.0),
                    det(11.0, 1.0, 21.0, 11.0),
                ],
                0.3,
            ),
        ];
        for (dets, eps) in cases {
            assert_eq!(
                resolve_overlaps(&dets, eps).unwrap(),
                brute_force_resolve(&dets, eps).unwrap()
            );
        }
    }

    #[test]
    fn retained_set_can_shrink_when_epsilon_rises() {
        // Raising epsilon can admit a mid-sized face that then eliminates
        // several smaller ones, so the retained set is not monotone in
        // epsilon for chained overlaps. This pins the actual behaviour.
        let a = det(0.0, 0.0, 101.0, 100.0);
        let b = det(90.0, 0.0, 190.0, 100.0);
        let c = det(101.0, 10.0, 151.0, 50.0);
        let d = det(101.0, 55.0, 151.0, 95.0);
        let input = vec![a, b, c, d];
        let low = resolve_overlaps(&input, 0.05).unwrap();
        let high = resolve_overlaps(&input, 0.5).unwrap();
        assert_eq!(low.len(), 3); // A, C, D
        assert_eq!(high.len(), 2); // A, B (B eliminates C and D)
    }

    #[test]
    fn landmark_margin_enforced_at_ingestion() {
        use crate::landmarks::LandmarkSet;
        let b = bx(10.0, 10.0, 20.0, 20.0);
        let inside = LandmarkSet::generic(vec![Point::new(10.5, 19.0)]).unwrap();
        assert!(FaceDetection::new(b, 0.9, Some(inside)).is_ok());
        // 10% of a 10px box is 1px: 9.0 is exactly on the margin, 8.9 is out.
        let on_margin = LandmarkSet::generic(vec![Point::new(9.0, 15.0)]).unwrap();
        assert!(FaceDetection::new(b, 0.9, Some(on_margin)).is_ok());
        let outside = LandmarkSet::generic(vec![Point::new(8.9, 15.0)]).unwrap();
        assert!(matches!(
            FaceDetection::new(b, 0.9, Some(outside)),
            Err(GeometryError::LandmarkOutsideMargin(..))
        ));
    }

    #[test]
    fn serde_rejects_invalid_box() {
        let err = serde_json::from_str::<BoundingBox>(
            r#"{"x_min": 5.0, "y_min": 0.0, "x_max": 4.0, "y_max": 10.0}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("positive width"));
    }

    #[test]
    fn annotated_face_round_trips_and_checks_area() {
        let face = AnnotatedFace::new(3, bx(1.0, 2.0, 4.0, 6.0), None).unwrap();
        let json = serde_json::to_string(&face).unwrap();
        let back: AnnotatedFace = serde_json::from_str(&json).unwrap();
        assert_eq!(face, back);

        let tampered = json.replace("12.0", "99.0");
        assert!(serde_json::from_str::<AnnotatedFace>(&tampered).is_err());
    }
}
