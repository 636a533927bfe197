//! Android view-hierarchy parsing: turns `uiautomator`-style XML dumps into
//! clickable-element boxes and object-detection samples.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{sample_id, BBox, Direction, Sample, TaskKind};

/// Instruction used for every object-detection sample.
pub const DETECTION_PROMPT: &str = "Locate all clickable UI elements on the screen.";

/// Element bounds in pixel space, as dumped by uiautomator. Coordinates may
/// be negative for partially offscreen elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

/// One node of the view hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct UiNode {
    /// `None` when the bounds attribute is missing or malformed.
    pub bounds: Option<PixelRect>,
    pub clickable: bool,
    pub class_name: String,
    pub text: Option<String>,
    pub content_desc: Option<String>,
    pub resource_id: Option<String>,
    pub children: Vec<UiNode>,
}

impl UiNode {
    /// Total node count including this node.
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(UiNode::node_count).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub struct ParsedHierarchy {
    pub root: UiNode,
    pub warnings: Vec<String>,
}

/// Parse a `bounds="[x1,y1][x2,y2]"` attribute value.
fn parse_bounds(raw: &str) -> Option<PixelRect> {
    let inner = raw.strip_prefix('[')?.strip_suffix(']')?;
    let (first, second) = inner.split_once("][")?;
    let mut nums = Vec::with_capacity(4);
    for part in first.split(',').chain(second.split(',')) {
        nums.push(part.trim().parse::<i32>().ok()?);
    }
    if nums.len() != 4 {
        return None;
    }
    Some(PixelRect {
        x1: nums[0],
        y1: nums[1],
        x2: nums[2],
        y2: nums[3],
    })
}

fn non_empty(value: Option<&str>) -> Option<String> {
    value.filter(|v| !v.is_empty()).map(str::to_owned)
}

fn node_label(node: &roxmltree::Node) -> String {
    node.attribute("resource-id")
        .filter(|v| !v.is_empty())
        .or_else(|| node.attribute("class"))
        .unwrap_or(node.tag_name().name())
        .to_owned()
}

fn build_node(node: roxmltree::Node, warnings: &mut Vec<String>) -> UiNode {
    let bounds = match node.attribute("bounds") {
        None => None,
        Some(raw) => match parse_bounds(raw) {
            None => {
                warnings.push(format!(
                    "malformed bounds {:?} on {}; node kept without bounds",
                    raw,
                    node_label(&node)
                ));
                None
            }
            Some(mut rect) => {
                // real dumps occasionally carry inverted corners; swap per axis
                let inverted = rect.x1 > rect.x2 || rect.y1 > rect.y2;
                if rect.x1 > rect.x2 {
                    std::mem::swap(&mut rect.x1, &mut rect.x2);
                }
                if rect.y1 > rect.y2 {
                    std::mem::swap(&mut rect.y1, &mut rect.y2);
                }
                if inverted {
                    warnings.push(format!(
                        "inverted bounds {:?} on {}; corners swapped",
                        raw,
                        node_label(&node)
                    ));
                }
                Some(rect)
            }
        },
    };
    UiNode {
        bounds,
        clickable: node.attribute("clickable") == Some("true"),
        class_name: node.attribute("class").unwrap_or("").to_owned(),
        text: non_empty(node.attribute("text")),
        content_desc: non_empty(node.attribute("content-desc")),
        resource_id: non_empty(node.attribute("resource-id")),
        children: node
            .children()
            .filter(|c| c.is_element())
            .map(|c| build_node(c, warnings))
            .collect(),
    }
}

/// Parse an XML dump into a node tree mirroring the document nesting.
///
/// Malformed documents fail with line/column; malformed `bounds` strings only
/// warn and leave the node without bounds.
pub fn parse_hierarchy(xml: &str) -> Result<ParsedHierarchy> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        Error::XmlParse {
            line: pos.row,
            col: pos.col,
            msg: e.to_string(),
        }
    })?;
    let mut warnings = Vec::new();
    let root = build_node(doc.root_element(), &mut warnings);
    Ok(ParsedHierarchy { root, warnings })
}

/// Depth-first collection of clickable-element boxes in document order,
/// clipped to the screen and normalized. Boxes with zero area after clipping
/// are dropped.
pub fn extract_clickables(root: &UiNode, screen_w: u32, screen_h: u32) -> Result<Vec<BBox>> {
    if screen_w == 0 || screen_h == 0 {
        return Err(Error::Config(format!(
            "screen dimensions must be positive, got {screen_w}x{screen_h}"
        )));
    }
    let mut out = Vec::new();
    collect_clickables(root, screen_w, screen_h, &mut out);
    Ok(out)
}

fn collect_clickables(node: &UiNode, screen_w: u32, screen_h: u32, out: &mut Vec<BBox>) {
    if node.clickable {
        if let Some(rect) = node.bounds {
            if let Some(b) = normalize_rect(rect, screen_w, screen_h) {
                out.push(b);
            }
        }
    }
    for child in &node.children {
        collect_clickables(child, screen_w, screen_h, out);
    }
}

fn normalize_rect(rect: PixelRect, screen_w: u32, screen_h: u32) -> Option<BBox> {
    let (w, h) = (f64::from(screen_w), f64::from(screen_h));
    let x1 = (f64::from(rect.x1)).clamp(0.0, w) / w;
    let y1 = (f64::from(rect.y1)).clamp(0.0, h) / h;
    let x2 = (f64::from(rect.x2)).clamp(0.0, w) / w;
    let y2 = (f64::from(rect.y2)).clamp(0.0, h) / h;
    if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
        return None; // zero area after clipping
    }
    BBox::new(x1, y1, x2, y2).ok()
}

/// Build an object-detection sample from extracted boxes. Returns `None` for
/// an empty box list (nothing to detect, no sample).
pub fn detection_sample(
    boxes: Vec<BBox>,
    image_ref: &str,
    image_w: u32,
    image_h: u32,
    source: &str,
) -> Option<Sample> {
    if boxes.is_empty() {
        return None;
    }
    let sample = Sample {
        id: sample_id(source, &format!("{image_ref}:object_detection")),
        source: source.to_owned(),
        image_ref: image_ref.to_owned(),
        image_w,
        image_h,
        task: TaskKind::ObjectDetection,
        direction: Direction::Grounding,
        prompt: DETECTION_PROMPT.to_owned(),
        target_text: None,
        target_boxes: boxes,
        target_point: None,
        meta: BTreeMap::new(),
    };
    debug_assert!(sample.validate().is_ok());
    Some(sample)
}
