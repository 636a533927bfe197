//! Shared domain types: normalized screen geometry, the multitask taxonomy
//! and the unified sample schema every pipeline stage produces or consumes.
//!
//! All geometry is stored normalized to `[0, 1]`; pixel coordinates are
//! converted at ingest using the image dimensions. Boundary hits on a box
//! edge count as inside.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn check_unit(what: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfRange { what, value: v });
    }
    Ok(())
}

/// A click location in normalized screen coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        check_unit("point.x", x)?;
        check_unit("point.y", y)?;
        Ok(Self { x, y })
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        (self.x, self.y).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (x, y) = <(f64, f64)>::deserialize(deserializer)?;
        Point::new(x, y).map_err(D::Error::custom)
    }
}

/// An axis-aligned box in normalized screen coordinates.
///
/// Serialized as a `[x1, y1, x2, y2]` array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        check_unit("box.x1", x1)?;
        check_unit("box.y1", y1)?;
        check_unit("box.x2", x2)?;
        check_unit("box.y2", y2)?;
        if x1 > x2 || y1 > y2 {
            return Err(Error::Geometry(format!(
                "box corners out of order: [{x1},{y1}][{x2},{y2}]"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn center(&self) -> Point {
        Point {
            x: (self.x1 + self.x2) / 2.0,
            y: (self.y1 + self.y2) / 2.0,
        }
    }

    /// Boundary-inclusive containment test.
    pub fn contains(&self, p: Point) -> bool {
        self.x1 <= p.x && p.x <= self.x2 && self.y1 <= p.y && p.y <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            // two degenerate boxes; identical coordinates count as a match
            return if self == other { 1.0 } else { 0.0 };
        }
        inter / union
    }

    /// Grow the box by `margin` on every side, clamped to the unit square.
    pub fn expand(&self, margin: f64) -> BBox {
        BBox {
            x1: (self.x1 - margin).max(0.0),
            y1: (self.y1 - margin).max(0.0),
            x2: (self.x2 + margin).min(1.0),
            y2: (self.y2 + margin).min(1.0),
        }
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        (self.x1, self.y1, self.x2, self.y2).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (x1, y1, x2, y2) = <(f64, f64, f64, f64)>::deserialize(deserializer)?;
        BBox::new(x1, y1, x2, y2).map_err(D::Error::custom)
    }
}

/// Center of a box, the click point a box prediction reduces to.
pub fn box_center(b: &BBox) -> Point {
    b.center()
}

/// Binary hit test: true iff the point falls within the box, edges inclusive.
pub fn point_in_box(p: Point, b: &BBox) -> bool {
    b.contains(p)
}

/// The five multitask objectives plus question answering and detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ElementCaption,
    ElementPurpose,
    ElementExpectation,
    ElementLocation,
    ObjectDetection,
    AgentAction,
    QuestionAnswering,
}

impl TaskKind {
    /// Caption/purpose/expectation/location tasks can be phrased in either
    /// direction; detection and actions are grounding-only, QA is neither.
    pub fn dual_direction(self) -> bool {
        matches!(
            self,
            TaskKind::ElementCaption
                | TaskKind::ElementPurpose
                | TaskKind::ElementExpectation
                | TaskKind::ElementLocation
        )
    }

    pub fn allows(self, direction: Direction) -> bool {
        match self {
            TaskKind::ObjectDetection | TaskKind::AgentAction => {
                direction == Direction::Grounding
            }
            TaskKind::QuestionAnswering => direction == Direction::NotApplicable,
            _ => matches!(direction, Direction::Grounding | Direction::Annotation),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ElementCaption => "element_caption",
            TaskKind::ElementPurpose => "element_purpose",
            TaskKind::ElementExpectation => "element_expectation",
            TaskKind::ElementLocation => "element_location",
            TaskKind::ObjectDetection => "object_detection",
            TaskKind::AgentAction => "agent_action",
            TaskKind::QuestionAnswering => "question_answering",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a task emits geometry given text, text given geometry, or neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Grounding,
    Annotation,
    NotApplicable,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Grounding => "grounding",
            Direction::Annotation => "annotation",
            Direction::NotApplicable => "not_applicable",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One unified training/eval record.
///
/// The JSON Lines field order below is the interchange schema; every field
/// is present on every line (`null` / `[]` / `{}` when empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub source: String,
    pub image_ref: String,
    pub image_w: u32,
    pub image_h: u32,
    pub task: TaskKind,
    pub direction: Direction,
    pub prompt: String,
    pub target_text: Option<String>,
    pub target_boxes: Vec<BBox>,
    pub target_point: Option<Point>,
    pub meta: BTreeMap<String, String>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Sample(format!("{}: {}", self.id, reason)))
        };
        if self.image_w == 0 || self.image_h == 0 {
            return fail(format!(
                "image dimensions must be positive, got {}x{}",
                self.image_w, self.image_h
            ));
        }
        if !self.task.allows(self.direction) {
            return fail(format!(
                "task {} does not allow direction {}",
                self.task, self.direction
            ));
        }
        match self.task {
            TaskKind::AgentAction | TaskKind::ElementLocation => {
                if self.target_boxes.is_empty() && self.target_point.is_none() {
                    return fail(format!("{} sample needs a target box or point", self.task));
                }
            }
            TaskKind::ObjectDetection => {
                if self.target_boxes.is_empty() {
                    return fail("object_detection sample needs at least one box".into());
                }
            }
            _ => {}
        }
        if self.direction == Direction::Annotation
            && self.target_text.as_deref().map_or(true, |t| t.is_empty())
        {
            return fail("annotation-direction sample needs non-empty target_text".into());
        }
        Ok(())
    }

    /// Raw element text a sample was generated from, when the producer kept it.
    pub fn meta_text(&self) -> Option<&str> {
        self.meta.get("text").map(String::as_str)
    }
}

/// One model prediction for a benchmark case. Exactly one of `point` / `box`
/// is present; a box reduces to its center for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub point: Option<Point>,
    #[serde(rename = "box")]
    pub bbox: Option<BBox>,
    pub latency_ms: Option<f64>,
}

impl PredictionRecord {
    pub fn from_point(sample_id: impl Into<String>, point: Point) -> Self {
        Self {
            sample_id: sample_id.into(),
            point: Some(point),
            bbox: None,
            latency_ms: None,
        }
    }

    pub fn from_box(sample_id: impl Into<String>, bbox: BBox) -> Self {
        Self {
            sample_id: sample_id.into(),
            point: None,
            bbox: Some(bbox),
            latency_ms: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.point.is_some(), self.bbox.is_some()) {
            (true, true) => Err(Error::Sample(format!(
                "{}: prediction has both point and box",
                self.sample_id
            ))),
            (false, false) => Err(Error::Sample(format!(
                "{}: prediction has neither point nor box",
                self.sample_id
            ))),
            _ => {
                if let Some(ms) = self.latency_ms {
                    if !ms.is_finite() || ms < 0.0 {
                        return Err(Error::Sample(format!(
                            "{}: latency_ms must be non-negative",
                            self.sample_id
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// The click point scored against ground truth.
    pub fn click_point(&self) -> Point {
        match (self.point, &self.bbox) {
            (Some(p), _) => p,
            (None, Some(b)) => b.center(),
            (None, None) => unreachable!("validated prediction has point or box"),
        }
    }
}

/// Content-derived stable id: 16 hex chars of SHA-256 over source + discriminator.
pub fn sample_id(source: &str, discriminator: &str) -> String {
    let mut h = Sha256::new();
    h.update(source.as_bytes());
    h.update(b":");
    h.update(discriminator.as_bytes());
    hex::encode(&h.finalize()[..8])
}

// ---------------------------------------------------------------------------
// JSON Lines IO
// ---------------------------------------------------------------------------

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read and validate a unified sample file.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let samples: Vec<Sample> = read_jsonl(path)?;
    for s in &samples {
        s.validate()?;
    }
    Ok(samples)
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    write_jsonl(path, samples)
}

/// Read and validate prediction records; duplicate ids are an error.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let preds: Vec<PredictionRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for p in &preds {
        p.validate()?;
        if !seen.insert(p.sample_id.clone()) {
            return Err(Error::DuplicatePrediction(p.sample_id.clone()));
        }
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn center_of_unit_box() {
        let c = box_center(&bx(0.0, 0.0, 1.0, 1.0));
        assert_eq!((c.x, c.y), (0.5, 0.5));
    }

    #[test]
    fn center_of_degenerate_box() {
        let c = box_center(&bx(0.2, 0.4, 0.2, 0.4));
        assert_eq!((c.x, c.y), (0.2, 0.4));
    }

    #[test]
    fn center_arithmetic() {
        let c = box_center(&bx(0.1, 0.2, 0.3, 0.6));
        assert!((c.x - 0.2).abs() < 1e-12);
        assert!((c.y - 0.4).abs() < 1e-12);
    }

    #[test]
    fn containment_is_boundary_inclusive() {
        let b = bx(0.2, 0.2, 0.4, 0.4);
        assert!(point_in_box(Point::new(0.5, 0.5).unwrap(), &bx(0.0, 0.0, 1.0, 1.0)));
        assert!(point_in_box(Point::new(0.2, 0.2).unwrap(), &b));
        assert!(!point_in_box(Point::new(0.41, 0.3).unwrap(), &b));
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(Point::new(-0.1, 0.5).is_err());
        assert!(Point::new(0.1, 1.5).is_err());
        assert!(BBox::new(0.5, 0.0, 0.4, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn bbox_serializes_as_array() {
        let b = bx(0.1, 0.2, 0.3, 0.4);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[0.1,0.2,0.3,0.4]");
        let back: BBox = serde_json::from_str("[0.1,0.2,0.3,0.4]").unwrap();
        assert_eq!(back, b);
        // invalid on the wire is rejected at deserialization
        assert!(serde_json::from_str::<BBox>("[0.5,0.0,0.4,1.0]").is_err());
    }

    #[test]
    fn task_direction_rules() {
        assert!(TaskKind::AgentAction.allows(Direction::Grounding));
        assert!(!TaskKind::AgentAction.allows(Direction::Annotation));
        assert!(!TaskKind::ObjectDetection.allows(Direction::NotApplicable));
        assert!(TaskKind::QuestionAnswering.allows(Direction::NotApplicable));
        assert!(!TaskKind::QuestionAnswering.allows(Direction::Grounding));
        assert!(TaskKind::ElementCaption.allows(Direction::Grounding));
        assert!(TaskKind::ElementCaption.allows(Direction::Annotation));
    }

    #[test]
    fn sample_invariants_enforced() {
        let mut s = Sample {
            id: "t".into(),
            source: "unit".into(),
            image_ref: "img.png".into(),
            image_w: 100,
            image_h: 100,
            task: TaskKind::AgentAction,
            direction: Direction::Grounding,
            prompt: "click".into(),
            target_text: None,
            target_boxes: vec![bx(0.1, 0.1, 0.2, 0.2)],
            target_point: None,
            meta: BTreeMap::new(),
        };
        assert!(s.validate().is_ok());

        s.target_boxes.clear();
        assert!(s.validate().is_err()); // agent action needs geometry

        s.target_point = Some(Point::new(0.15, 0.15).unwrap());
        assert!(s.validate().is_ok());

        s.image_w = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn prediction_exactly_one_payload() {
        let ok = PredictionRecord::from_point("a", Point::new(0.3, 0.3).unwrap());
        assert!(ok.validate().is_ok());
        let both = PredictionRecord {
            sample_id: "a".into(),
            point: Some(Point::new(0.3, 0.3).unwrap()),
            bbox: Some(bx(0.0, 0.0, 1.0, 1.0)),
            latency_ms: None,
        };
        assert!(both.validate().is_err());
        let neither = PredictionRecord {
            sample_id: "a".into(),
            point: None,
            bbox: None,
            latency_ms: None,
        };
        assert!(neither.validate().is_err());
    }

    #[test]
    fn prediction_box_reduces_to_center() {
        let p = PredictionRecord::from_box("a", bx(0.2, 0.2, 0.4, 0.6));
        let c = p.click_point();
        assert!((c.x - 0.3).abs() < 1e-12 && (c.y - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ids_are_stable_and_distinct() {
        assert_eq!(sample_id("src", "0:agent_action"), sample_id("src", "0:agent_action"));
        assert_ne!(sample_id("src", "0:agent_action"), sample_id("src", "1:agent_action"));
        assert_eq!(sample_id("src", "x").len(), 16);
    }

    mod roundtrip {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox> {
            (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b, c, d)| {
                BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap()
            })
        }

        prop_compose! {
            fn arb_sample()(
                id in "[a-f0-9]{16}",
                source in "[a-z]{1,10}",
                image_ref in "[a-z/]{1,20}\\.png",
                image_w in 1u32..4000,
                image_h in 1u32..4000,
                prompt in ".{0,40}",
                text in proptest::option::of(".{1,40}"),
                boxes in proptest::collection::vec(arb_box(), 0..4),
                meta in proptest::collection::btree_map("[a-z]{1,6}", ".{0,20}", 0..3),
                selector in 0usize..4,
            ) -> Sample {
                // pick a (task, direction) pair consistent with the payload
                let (task, direction) = match selector {
                    0 => (TaskKind::QuestionAnswering, Direction::NotApplicable),
                    1 => (TaskKind::ElementCaption, Direction::Annotation),
                    2 => (TaskKind::ElementCaption, Direction::Grounding),
                    _ => (TaskKind::AgentAction, Direction::Grounding),
                };
                let mut s = Sample {
                    id, source, image_ref, image_w, image_h,
                    task, direction,
                    prompt,
                    target_text: text,
                    target_boxes: boxes,
                    target_point: None,
                    meta,
                };
                if s.direction == Direction::Annotation && s.target_text.is_none() {
                    s.target_text = Some("t".into());
                }
                if s.task == TaskKind::AgentAction && s.target_boxes.is_empty() {
                    s.target_point = Some(Point { x: 0.5, y: 0.5 });
                }
                s
            }
        }

        proptest! {
            #[test]
            fn jsonl_line_round_trip_is_identity(sample in arb_sample()) {
                prop_assume!(sample.validate().is_ok());
                let line = serde_json::to_string(&sample).unwrap();
                let back: Sample = serde_json::from_str(&line).unwrap();
                prop_assert_eq!(back, sample);
            }
        }
    }
}
