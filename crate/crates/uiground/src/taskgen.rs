//! Multitask prompt/target generation: expands annotated elements into
//! training samples for every applicable (task kind, direction) template.
//!
//! Template texts are configuration, not code. Grounding templates place
//! `{LOC}` only in the target; annotation templates place it only in the
//! prompt. The default pack ships one wording per pair; swap it with
//! `TemplatePack::from_path` when a backbone expects different task headers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loc::TokenFormat;
use crate::model::{sample_id, BBox, Direction, Sample, TaskKind};
use crate::sampling::{exact_subset, included_by_hash, SamplingMode};

/// Everything known about one UI element: its box plus whichever descriptive
/// texts sources or the annotation pipeline provided.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElementAnnotation {
    pub bbox: Option<BBox>,
    pub caption: Option<String>,
    pub purpose: Option<String>,
    pub expectation: Option<String>,
    pub command: Option<String>,
}

impl ElementAnnotation {
    /// Text backing a task kind: captions also back element-location tasks
    /// (the element's visual description).
    pub fn text_for(&self, kind: TaskKind) -> Option<&str> {
        match kind {
            TaskKind::ElementCaption | TaskKind::ElementLocation => self.caption.as_deref(),
            TaskKind::ElementPurpose => self.purpose.as_deref(),
            TaskKind::ElementExpectation => self.expectation.as_deref(),
            TaskKind::AgentAction => self.command.as_deref(),
            TaskKind::ObjectDetection | TaskKind::QuestionAnswering => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.caption.is_none()
            && self.purpose.is_none()
            && self.expectation.is_none()
            && self.command.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub kind: TaskKind,
    pub direction: Direction,
    pub prompt: String,
    pub target: String,
}

impl TaskTemplate {
    fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if !self.kind.allows(self.direction) {
            return err(format!(
                "template {}/{}: direction not allowed for kind",
                self.kind, self.direction
            ));
        }
        match self.direction {
            Direction::Grounding => {
                if self.prompt.contains("{LOC}") {
                    return err(format!(
                        "grounding template {}: {{LOC}} belongs in the target only",
                        self.kind
                    ));
                }
                if !self.target.contains("{LOC}") {
                    return err(format!(
                        "grounding template {}: target must contain {{LOC}}",
                        self.kind
                    ));
                }
            }
            Direction::Annotation => {
                if self.target.contains("{LOC}") {
                    return err(format!(
                        "annotation template {}: {{LOC}} belongs in the prompt only",
                        self.kind
                    ));
                }
                if !self.prompt.contains("{LOC}") {
                    return err(format!(
                        "annotation template {}: prompt must contain {{LOC}}",
                        self.kind
                    ));
                }
                if !self.target.contains("{TEXT}") {
                    return err(format!(
                        "annotation template {}: target must contain {{TEXT}}",
                        self.kind
                    ));
                }
            }
            Direction::NotApplicable => {
                return err("templates must be grounding or annotation".into());
            }
        }
        Ok(())
    }
}

/// Default template wordings, one per (kind, direction) pair.
const DEFAULT_TEMPLATES: &str = include_str!("templates/default.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplatePack {
    #[serde(rename = "template")]
    pub templates: Vec<TaskTemplate>,
}

impl TemplatePack {
    pub fn parse(text: &str) -> Result<Self> {
        let pack: TemplatePack =
            toml::from_str(text).map_err(|e| Error::Config(format!("template pack: {e}")))?;
        let mut seen = BTreeMap::new();
        for t in &pack.templates {
            t.validate()?;
            if seen.insert((t.kind, t.direction), ()).is_some() {
                return Err(Error::Config(format!(
                    "duplicate template for {}/{}",
                    t.kind, t.direction
                )));
            }
        }
        Ok(pack)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, kind: TaskKind, direction: Direction) -> Option<&TaskTemplate> {
        self.templates
            .iter()
            .find(|t| t.kind == kind && t.direction == direction)
    }
}

impl Default for TemplatePack {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled template pack is valid")
    }
}

#[derive(Debug, Clone)]
pub struct GenOptions {
    /// Render agent-action targets as a 2-token center point instead of the
    /// 4-token element box.
    pub point_targets: bool,
    pub format: TokenFormat,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            point_targets: false,
            format: TokenFormat::default(),
        }
    }
}

/// Identity of the screen an element sits on.
#[derive(Debug, Clone, Copy)]
pub struct ScreenRef<'a> {
    pub image_ref: &'a str,
    pub image_w: u32,
    pub image_h: u32,
}

/// Expand an annotated element into one sample per applicable template.
/// Templates whose text field is absent are skipped silently.
pub fn generate(
    ann: &ElementAnnotation,
    screen: ScreenRef<'_>,
    source: &str,
    row: &str,
    pack: &TemplatePack,
    opts: &GenOptions,
) -> Result<Vec<Sample>> {
    let bbox = ann
        .bbox
        .ok_or_else(|| Error::Geometry(format!("{source}:{row}: element has no box")))?;
    let mut out = Vec::new();
    for template in &pack.templates {
        let Some(text) = ann.text_for(template.kind) else {
            continue;
        };
        if text.trim().is_empty() {
            continue;
        }
        out.push(render(template, text, bbox, screen, source, row, opts)?);
    }
    Ok(out)
}

fn render(
    template: &TaskTemplate,
    text: &str,
    bbox: BBox,
    screen: ScreenRef<'_>,
    source: &str,
    row: &str,
    opts: &GenOptions,
) -> Result<Sample> {
    let point_target = opts.point_targets && template.kind == TaskKind::AgentAction;
    let loc = if point_target && template.direction == Direction::Grounding {
        opts.format.encode_point(bbox.center())?
    } else {
        opts.format.encode_box(&bbox)?
    };
    let expand = |pattern: &str| pattern.replace("{TEXT}", text).replace("{LOC}", &loc);
    let prompt = expand(&template.prompt);
    let target_text = expand(&template.target);
    let mut meta = BTreeMap::new();
    meta.insert("text".to_owned(), text.to_owned());
    meta.insert("row".to_owned(), row.to_owned());
    let sample = Sample {
        id: sample_id(
            source,
            &format!("{row}:{}:{}", template.kind, template.direction),
        ),
        source: source.to_owned(),
        image_ref: screen.image_ref.to_owned(),
        image_w: screen.image_w,
        image_h: screen.image_h,
        task: template.kind,
        direction: template.direction,
        prompt,
        target_text: Some(target_text),
        target_boxes: if point_target { Vec::new() } else { vec![bbox] },
        target_point: point_target.then(|| bbox.center()),
        meta,
    };
    sample.validate()?;
    Ok(sample)
}

/// Build a question-answering sample; question and answer must be non-empty.
pub fn qa_sample(
    question: &str,
    answer: &str,
    screen: ScreenRef<'_>,
    source: &str,
    row: &str,
) -> Result<Sample> {
    if question.trim().is_empty() || answer.trim().is_empty() {
        return Err(Error::Data(format!(
            "{source}:{row}: question answering needs both question and answer"
        )));
    }
    let mut meta = BTreeMap::new();
    meta.insert("row".to_owned(), row.to_owned());
    let sample = Sample {
        id: sample_id(source, &format!("{row}:question_answering")),
        source: source.to_owned(),
        image_ref: screen.image_ref.to_owned(),
        image_w: screen.image_w,
        image_h: screen.image_h,
        task: TaskKind::QuestionAnswering,
        direction: Direction::NotApplicable,
        prompt: question.to_owned(),
        target_text: Some(answer.to_owned()),
        target_boxes: Vec::new(),
        target_point: None,
        meta,
    };
    sample.validate()?;
    Ok(sample)
}

/// Outcome of a direction split: dual-capable samples land in `annotation`
/// or `grounding` per the seeded assignment, fixed-direction samples keep
/// their stream, and direction-free samples (QA) pass through as `neutral`.
#[derive(Debug, Clone, Default)]
pub struct DirectionSplit {
    pub annotation: Vec<Sample>,
    pub grounding: Vec<Sample>,
    pub neutral: Vec<Sample>,
}

fn is_dual_capable(sample: &Sample) -> bool {
    sample.task.dual_direction()
        && !sample.target_boxes.is_empty()
        && sample
            .meta_text()
            .or(sample.target_text.as_deref())
            .map_or(false, |t| !t.trim().is_empty())
}

/// Deterministically assign dual-capable samples to the annotation direction
/// with probability/fraction `ratio`, the rest to grounding.
///
/// Note the assignment only sets the `direction` field; re-render with
/// [`render_sample`] to refresh prompt and target texts.
pub fn direction_split(
    samples: Vec<Sample>,
    ratio: f64,
    seed: u64,
    mode: SamplingMode,
) -> Result<DirectionSplit> {
    if !(0.0..=1.0).contains(&ratio) || !ratio.is_finite() {
        return Err(Error::Config(format!(
            "annotation ratio must be in [0,1], got {ratio}"
        )));
    }
    let mut split = DirectionSplit::default();
    let dual_ids: Vec<&str> = samples
        .iter()
        .filter(|s| is_dual_capable(s))
        .map(|s| s.id.as_str())
        .collect();
    let exact_pick: std::collections::HashSet<usize> = match mode {
        SamplingMode::CountExact => exact_subset(dual_ids.len(), ratio, seed, "direction-split")
            .into_iter()
            .collect(),
        SamplingMode::HashBased => Default::default(),
    };
    let mut dual_index = 0usize;
    for mut sample in samples {
        if is_dual_capable(&sample) {
            let annotate = match mode {
                SamplingMode::CountExact => exact_pick.contains(&dual_index),
                SamplingMode::HashBased => included_by_hash(seed, &sample.id, ratio),
            };
            dual_index += 1;
            sample.direction = if annotate {
                Direction::Annotation
            } else {
                Direction::Grounding
            };
            if annotate {
                split.annotation.push(sample);
            } else {
                split.grounding.push(sample);
            }
        } else {
            match sample.direction {
                Direction::Annotation => split.annotation.push(sample),
                Direction::Grounding => split.grounding.push(sample),
                Direction::NotApplicable => split.neutral.push(sample),
            }
        }
    }
    Ok(split)
}

/// Re-render an element sample after a direction change (or with a different
/// template pack). Detection and QA samples pass through unchanged; element
/// samples without a template for their (kind, direction) return `None`.
pub fn render_sample(
    sample: &Sample,
    pack: &TemplatePack,
    opts: &GenOptions,
) -> Result<Option<Sample>> {
    if !sample.task.dual_direction() && sample.task != TaskKind::AgentAction {
        return Ok(Some(sample.clone()));
    }
    let Some(template) = pack.get(sample.task, sample.direction) else {
        return Ok(None);
    };
    let text = sample
        .meta_text()
        .or(sample.target_text.as_deref())
        .filter(|t| !t.trim().is_empty())
        .or({
            // raw grounding samples carry the text as their prompt
            if sample.direction == Direction::Grounding && !sample.prompt.trim().is_empty() {
                Some(sample.prompt.as_str())
            } else {
                None
            }
        });
    let (Some(text), Some(bbox)) = (text, element_box(sample)) else {
        return Ok(None);
    };
    let row = sample
        .meta
        .get("row")
        .cloned()
        .unwrap_or_else(|| sample.id.clone());
    let screen = ScreenRef {
        image_ref: &sample.image_ref,
        image_w: sample.image_w,
        image_h: sample.image_h,
    };
    let mut rendered = render(template, text, bbox, screen, &sample.source, &row, opts)?;
    // keep provenance the producer attached
    for (k, v) in &sample.meta {
        rendered.meta.entry(k.clone()).or_insert_with(|| v.clone());
    }
    Ok(Some(rendered))
}

fn element_box(sample: &Sample) -> Option<BBox> {
    sample.target_boxes.first().copied().or_else(|| {
        sample
            .target_point
            .map(|p| BBox::new(p.x, p.y, p.x, p.y).expect("point is a valid degenerate box"))
    })
}
