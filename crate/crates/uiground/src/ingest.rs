//! Corpus ingestion: converts heterogeneous public corpora into the unified
//! sample schema, filters benchmark contamination and builds reproducible
//! training mixtures from a manifest.
//!
//! Converters are table-driven: each source format declares which row fields
//! hold the image, its size, the element box and the task texts, so new
//! corpora only need a new field map. Rows are expected pre-flattened to one
//! element (or one QA pair) per JSON line; see the README for the exact
//! per-format field names.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::BenchmarkCase;
use crate::model::{sample_id, BBox, Direction, Sample, TaskKind};
use crate::sampling::{exact_subset, included_by_hash, round_count, SamplingMode};
use crate::taskgen;

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    Waveui,
    Amex,
    Guicourse,
    Androidcontrol,
    Screenqa,
    GenericJsonl,
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourceFormat::Waveui => "waveui",
            SourceFormat::Amex => "amex",
            SourceFormat::Guicourse => "guicourse",
            SourceFormat::Androidcontrol => "androidcontrol",
            SourceFormat::Screenqa => "screenqa",
            SourceFormat::GenericJsonl => "generic-jsonl",
        };
        f.write_str(s)
    }
}

/// One corpus in a mixture manifest. `path` may be omitted for declared-count
/// sources, which contribute accounting rows but no materialized samples
/// (used to check mixture arithmetic without the corpora on disk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub format: SourceFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub fraction: f64,
    /// Declared row count for sources without a path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<u64>,
    /// Task kinds to emit; `None` means every kind the format provides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_map: Option<Vec<TaskKind>>,
}

impl SourceSpec {
    fn emits(&self, kind: TaskKind) -> bool {
        self.task_map.as_ref().map_or(true, |m| m.contains(&kind))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub seed: u64,
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(rename = "source")]
    pub sources: Vec<SourceSpec>,
}

impl MixtureManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let manifest: MixtureManifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for s in &self.sources {
            if !(s.fraction > 0.0 && s.fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "source {}: fraction must be in (0,1], got {}",
                    s.name, s.fraction
                )));
            }
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate source name {}", s.name)));
            }
            if s.path.is_none() && s.rows.is_none() {
                return Err(Error::Config(format!(
                    "source {}: needs a path or a declared row count",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Format field maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum SizeField {
    /// One field holding a `[w, h]` array.
    Pair(&'static str),
    /// Two scalar fields.
    Split(&'static str, &'static str),
}

#[derive(Debug, Clone, Copy)]
enum Extract {
    Element {
        kind: TaskKind,
        direction: Direction,
        field: &'static str,
    },
    Detection {
        field: &'static str,
    },
    Qa {
        question: &'static str,
        answer: &'static str,
    },
}

#[derive(Debug, Clone, Copy)]
struct FieldMap {
    image: &'static str,
    size: SizeField,
    bbox: Option<&'static str>,
    extracts: &'static [Extract],
}

fn field_map(format: SourceFormat) -> Option<FieldMap> {
    use Direction::*;
    use TaskKind::*;
    match format {
        SourceFormat::Waveui => Some(FieldMap {
            image: "image",
            size: SizeField::Pair("resolution"),
            bbox: Some("bbox"),
            extracts: &[
                Extract::Element { kind: AgentAction, direction: Grounding, field: "instruction" },
                Extract::Element { kind: ElementCaption, direction: Annotation, field: "description" },
                Extract::Element { kind: ElementPurpose, direction: Annotation, field: "purpose" },
                Extract::Element { kind: ElementExpectation, direction: Annotation, field: "expectation" },
                Extract::Element { kind: ElementLocation, direction: Grounding, field: "name" },
            ],
        }),
        SourceFormat::Amex => Some(FieldMap {
            image: "image",
            size: SizeField::Pair("image_size"),
            bbox: Some("bbox"),
            extracts: &[
                Extract::Element { kind: AgentAction, direction: Grounding, field: "functionality" },
                Extract::Element { kind: ElementPurpose, direction: Annotation, field: "purpose" },
                Extract::Element { kind: ElementExpectation, direction: Annotation, field: "expectation" },
                Extract::Detection { field: "clickable_bboxes" },
            ],
        }),
        SourceFormat::Guicourse => Some(FieldMap {
            image: "image",
            size: SizeField::Pair("resolution"),
            bbox: Some("bbox"),
            extracts: &[
                Extract::Element { kind: AgentAction, direction: Grounding, field: "command" },
                Extract::Element { kind: ElementCaption, direction: Annotation, field: "caption" },
                Extract::Element { kind: ElementExpectation, direction: Annotation, field: "expectation" },
            ],
        }),
        SourceFormat::Androidcontrol => Some(FieldMap {
            image: "screenshot",
            size: SizeField::Split("screen_width", "screen_height"),
            bbox: Some("bbox"),
            extracts: &[Extract::Element {
                kind: AgentAction,
                direction: Grounding,
                field: "instruction",
            }],
        }),
        SourceFormat::Screenqa => Some(FieldMap {
            image: "image",
            size: SizeField::Pair("resolution"),
            bbox: None,
            extracts: &[Extract::Qa { question: "question", answer: "answer" }],
        }),
        SourceFormat::GenericJsonl => None,
    }
}

// ---------------------------------------------------------------------------
// Conversion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConvertStats {
    pub rows_read: u64,
    pub samples_emitted: u64,
    /// Skip counts keyed by reason.
    pub skips: BTreeMap<String, u64>,
}

impl ConvertStats {
    fn skip(&mut self, reason: &str) {
        *self.skips.entry(reason.to_owned()).or_insert(0) += 1;
    }
}

fn get_str<'v>(row: &'v Value, field: &str) -> Option<&'v str> {
    row.get(field)?.as_str().filter(|s| !s.trim().is_empty())
}

fn get_u32(v: &Value) -> Option<u32> {
    let n = v.as_f64()?;
    if n.is_finite() && n > 0.0 && n <= u32::MAX as f64 {
        Some(n as u32)
    } else {
        None
    }
}

fn read_size(row: &Value, size: SizeField) -> Option<(u32, u32)> {
    match size {
        SizeField::Pair(field) => {
            let arr = row.get(field)?.as_array()?;
            if arr.len() != 2 {
                return None;
            }
            Some((get_u32(&arr[0])?, get_u32(&arr[1])?))
        }
        SizeField::Split(wf, hf) => Some((get_u32(row.get(wf)?)?, get_u32(row.get(hf)?)?)),
    }
}

/// Read a `[x1,y1,x2,y2]` pixel box and normalize by the image size.
/// Returns `Err` if the value is present but unusable, `Ok(None)` if absent.
fn read_norm_box(row: &Value, field: &str, w: u32, h: u32) -> Result<Option<BBox>> {
    let Some(value) = row.get(field) else {
        return Ok(None);
    };
    let arr = value
        .as_array()
        .ok_or_else(|| Error::Data(format!("{field} is not an array")))?;
    if arr.len() != 4 {
        return Err(Error::Data(format!("{field} needs 4 numbers")));
    }
    let mut c = [0f64; 4];
    for (i, v) in arr.iter().enumerate() {
        c[i] = v
            .as_f64()
            .ok_or_else(|| Error::Data(format!("{field}[{i}] is not a number")))?;
    }
    let b = BBox::new(
        c[0] / f64::from(w),
        c[1] / f64::from(h),
        c[2] / f64::from(w),
        c[3] / f64::from(h),
    )
    .map_err(|e| Error::Data(format!("{field} outside [0,1] after normalization: {e}")))?;
    Ok(Some(b))
}

/// Convert one source into unified samples. Unreadable rows are skipped and
/// counted by reason, never fatal; an unrecognized format is a configuration
/// error at manifest load time.
pub fn convert(spec: &SourceSpec) -> Result<(Vec<Sample>, ConvertStats)> {
    let path = spec
        .path
        .as_deref()
        .ok_or_else(|| Error::Config(format!("source {} has no path to convert", spec.name)))?;
    let mut stats = ConvertStats::default();
    if spec.format == SourceFormat::GenericJsonl {
        return convert_generic(spec, path, stats);
    }
    let map = field_map(spec.format).expect("non-generic formats have a field map");
    let rows: Vec<Value> = crate::model::read_jsonl(path)?;
    let mut samples = Vec::new();
    for (idx, row) in rows.iter().enumerate() {
        stats.rows_read += 1;
        if !row.is_object() {
            stats.skip("row is not a JSON object");
            continue;
        }
        let Some(image_ref) = get_str(row, map.image) else {
            stats.skip("missing image ref");
            continue;
        };
        let Some((w, h)) = read_size(row, map.size) else {
            stats.skip("missing or invalid image size");
            continue;
        };
        let screen = taskgen::ScreenRef {
            image_ref,
            image_w: w,
            image_h: h,
        };
        let bbox = match map.bbox.map(|f| read_norm_box(row, f, w, h)).transpose() {
            Ok(b) => b.flatten(),
            Err(e) => {
                stats.skip(&format!("bbox unusable ({})", skip_reason(&e)));
                continue;
            }
        };
        for extract in map.extracts {
            match emit_extract(spec, row, idx, screen, bbox, extract, &mut stats) {
                Ok(mut emitted) => samples.append(&mut emitted),
                Err(e) => stats.skip(&format!("row error ({})", skip_reason(&e))),
            }
        }
    }
    stats.samples_emitted = samples.len() as u64;
    Ok((samples, stats))
}

fn skip_reason(e: &Error) -> String {
    match e {
        Error::Data(msg) => msg.clone(),
        other => other.to_string(),
    }
}

fn emit_extract(
    spec: &SourceSpec,
    row: &Value,
    idx: usize,
    screen: taskgen::ScreenRef<'_>,
    bbox: Option<BBox>,
    extract: &Extract,
    stats: &mut ConvertStats,
) -> Result<Vec<Sample>> {
    match extract {
        Extract::Element { kind, direction, field } => {
            if !spec.emits(*kind) {
                return Ok(Vec::new());
            }
            let Some(text) = get_str(row, field) else {
                return Ok(Vec::new()); // field absent: nothing to emit
            };
            let Some(bbox) = bbox else {
                stats.skip("element text without bbox");
                return Ok(Vec::new());
            };
            Ok(vec![raw_element_sample(
                spec, idx, screen, bbox, *kind, *direction, text,
            )])
        }
        Extract::Detection { field } => {
            if !spec.emits(TaskKind::ObjectDetection) {
                return Ok(Vec::new());
            }
            let Some(value) = row.get(*field) else {
                return Ok(Vec::new());
            };
            let arr = value
                .as_array()
                .ok_or_else(|| Error::Data(format!("{field} is not an array")))?;
            let mut boxes = Vec::with_capacity(arr.len());
            for (i, _) in arr.iter().enumerate() {
                let holder = serde_json::json!({ "b": arr[i] });
                match read_norm_box(&holder, "b", screen.image_w, screen.image_h)? {
                    Some(b) => boxes.push(b),
                    None => return Err(Error::Data(format!("{field}[{i}] missing"))),
                }
            }
            Ok(crate::hierarchy::detection_sample(
                boxes,
                screen.image_ref,
                screen.image_w,
                screen.image_h,
                &spec.name,
            )
            .into_iter()
            .map(|mut s| {
                s.id = sample_id(&spec.name, &format!("{idx}:object_detection"));
                s.meta.insert("row".into(), idx.to_string());
                s
            })
            .collect())
        }
        Extract::Qa { question, answer } => {
            if !spec.emits(TaskKind::QuestionAnswering) {
                return Ok(Vec::new());
            }
            let (Some(q), Some(a)) = (get_str(row, question), get_str(row, answer)) else {
                return Ok(Vec::new());
            };
            Ok(vec![taskgen::qa_sample(
                q,
                a,
                screen,
                &spec.name,
                &idx.to_string(),
            )?])
        }
    }
}

/// A raw (untemplated) element sample: the source text sits in the prompt
/// for grounding kinds and in the target for annotation kinds, and is always
/// preserved under `meta.text` so `gen-tasks` can re-render either way.
fn raw_element_sample(
    spec: &SourceSpec,
    idx: usize,
    screen: taskgen::ScreenRef<'_>,
    bbox: BBox,
    kind: TaskKind,
    direction: Direction,
    text: &str,
) -> Sample {
    let mut meta = BTreeMap::new();
    meta.insert("text".to_owned(), text.to_owned());
    meta.insert("row".to_owned(), idx.to_string());
    let sample = Sample {
        id: sample_id(&spec.name, &format!("{idx}:{kind}:{direction}")),
        source: spec.name.clone(),
        image_ref: screen.image_ref.to_owned(),
        image_w: screen.image_w,
        image_h: screen.image_h,
        task: kind,
        direction,
        prompt: if direction == Direction::Grounding {
            text.to_owned()
        } else {
            String::new()
        },
        target_text: (direction == Direction::Annotation).then(|| text.to_owned()),
        target_boxes: vec![bbox],
        target_point: None,
        meta,
    };
    debug_assert!(sample.validate().is_ok());
    sample
}

fn convert_generic(
    spec: &SourceSpec,
    path: &Path,
    mut stats: ConvertStats,
) -> Result<(Vec<Sample>, ConvertStats)> {
    let rows: Vec<Value> = crate::model::read_jsonl(path)?;
    let mut samples = Vec::new();
    for row in rows {
        stats.rows_read += 1;
        match serde_json::from_value::<Sample>(row) {
            Ok(s) => match s.validate() {
                Ok(()) => {
                    let mut s = s;
                    if !spec.emits(s.task) {
                        continue;
                    }
                    s.source = spec.name.clone();
                    samples.push(s);
                }
                Err(e) => stats.skip(&format!("invalid sample ({})", skip_reason(&e))),
            },
            Err(e) => stats.skip(&format!("undecodable sample ({e})")),
        }
    }
    stats.samples_emitted = samples.len() as u64;
    Ok((samples, stats))
}

// ---------------------------------------------------------------------------
// Contamination filter
// ---------------------------------------------------------------------------

/// Index over benchmark cases used to drop training rows that duplicate a
/// benchmark screenshot (by content hash) or annotation (same normalized
/// command text with box IoU >= 0.9).
#[derive(Debug, Default, Clone)]
pub struct BenchmarkIndex {
    image_hashes: HashSet<String>,
    annotations: HashMap<String, Vec<BBox>>,
}

pub const CONTAMINATION_IOU: f64 = 0.9;

fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn hash_file(path: &Path) -> Option<String> {
    let bytes = std::fs::read(path).ok()?;
    Some(hex::encode(Sha256::digest(&bytes)))
}

impl BenchmarkIndex {
    /// Build from benchmark cases. Screenshot files that cannot be read are
    /// skipped (their annotations still match by text + IoU).
    pub fn build(cases: &[BenchmarkCase]) -> Self {
        let mut index = BenchmarkIndex::default();
        let mut hashed: HashMap<&str, Option<String>> = HashMap::new();
        for case in cases {
            let digest = hashed
                .entry(case.image_ref.as_str())
                .or_insert_with(|| hash_file(Path::new(&case.image_ref)));
            if let Some(d) = digest {
                index.image_hashes.insert(d.clone());
            }
            index
                .annotations
                .entry(normalize_text(&case.command))
                .or_default()
                .push(case.gt_box);
        }
        index
    }

    pub fn is_empty(&self) -> bool {
        self.image_hashes.is_empty() && self.annotations.is_empty()
    }

    fn matches_annotation(&self, text: &str, boxes: &[BBox]) -> bool {
        match self.annotations.get(&normalize_text(text)) {
            None => false,
            Some(gt_boxes) => boxes
                .iter()
                .any(|b| gt_boxes.iter().any(|gt| b.iou(gt) >= CONTAMINATION_IOU)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ContaminationReport {
    pub checked: u64,
    pub dropped_image: u64,
    pub dropped_annotation: u64,
}

impl ContaminationReport {
    pub fn dropped(&self) -> u64 {
        self.dropped_image + self.dropped_annotation
    }
}

/// Drop samples matching the benchmark index. Image hashes are computed per
/// distinct `image_ref` and memoized across the stream.
pub fn contamination_filter(
    samples: Vec<Sample>,
    index: &BenchmarkIndex,
) -> (Vec<Sample>, ContaminationReport) {
    let mut report = ContaminationReport::default();
    let mut hashed: HashMap<String, Option<String>> = HashMap::new();
    let mut kept = Vec::with_capacity(samples.len());
    for sample in samples {
        report.checked += 1;
        let image_hit = if index.image_hashes.is_empty() {
            false
        } else {
            hashed
                .entry(sample.image_ref.clone())
                .or_insert_with(|| hash_file(Path::new(&sample.image_ref)))
                .as_ref()
                .is_some_and(|d| index.image_hashes.contains(d))
        };
        if image_hit {
            report.dropped_image += 1;
            continue;
        }
        let text = sample
            .meta_text()
            .map(str::to_owned)
            .or_else(|| {
                (!sample.prompt.trim().is_empty()).then(|| sample.prompt.clone())
            })
            .or_else(|| sample.target_text.clone());
        let annotation_hit = text
            .map(|t| index.matches_annotation(&t, &sample.target_boxes))
            .unwrap_or(false);
        if annotation_hit {
            report.dropped_annotation += 1;
            continue;
        }
        kept.push(sample);
    }
    (kept, report)
}

// ---------------------------------------------------------------------------
// Mixture builder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RealizedSource {
    pub name: String,
    pub format: String,
    pub fraction: f64,
    pub rows_in: u64,
    pub rows_kept: u64,
    pub rows_dropped_contamination: u64,
}

/// Accounting record of an executed mixture: exact per-source counts plus
/// the seed that reproduces the row choice.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RealizedManifest {
    pub seed: u64,
    pub mode: SamplingMode,
    pub total_rows: u64,
    #[serde(rename = "source")]
    pub sources: Vec<RealizedSource>,
}

impl RealizedManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("realized manifest: {e}")))
    }
}

enum SourceOutcome {
    Declared(RealizedSource),
    Materialized {
        realized: RealizedSource,
        samples: Vec<Sample>,
        stats: ConvertStats,
    },
}

/// Convert, filter and subsample every source of a manifest.
///
/// Sources convert in parallel but merge in name order with each source's
/// surviving rows in their original relative order, so the output stream
/// has a deterministic global order. Declared-count sources (no path)
/// contribute accounting only.
pub fn build_mixture(
    manifest: &MixtureManifest,
    benchmark_index: Option<&BenchmarkIndex>,
) -> Result<(Vec<Sample>, RealizedManifest, BTreeMap<String, ConvertStats>)> {
    manifest.validate()?;
    let mut ordered: Vec<&SourceSpec> = manifest.sources.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));

    let outcomes: Vec<SourceOutcome> = ordered
        .par_iter()
        .map(|spec| -> Result<SourceOutcome> {
            if spec.path.is_none() {
                let rows_in = spec.rows.expect("validated: counts-only source has rows");
                return Ok(SourceOutcome::Declared(RealizedSource {
                    name: spec.name.clone(),
                    format: spec.format.to_string(),
                    fraction: spec.fraction,
                    rows_in,
                    rows_kept: round_count(rows_in as usize, spec.fraction) as u64,
                    rows_dropped_contamination: 0,
                }));
            }
            let (samples, stats) = convert(spec)?;
            let rows_in = samples.len() as u64;
            let (clean, contamination) = match benchmark_index {
                Some(index) => contamination_filter(samples, index),
                None => (samples, ContaminationReport::default()),
            };
            let sampled = subsample(clean, spec, manifest.seed, manifest.mode);
            Ok(SourceOutcome::Materialized {
                realized: RealizedSource {
                    name: spec.name.clone(),
                    format: spec.format.to_string(),
                    fraction: spec.fraction,
                    rows_in,
                    rows_kept: sampled.len() as u64,
                    rows_dropped_contamination: contamination.dropped(),
                },
                samples: sampled,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut all = Vec::new();
    let mut realized = Vec::new();
    let mut stats_by_source = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            SourceOutcome::Declared(r) => realized.push(r),
            SourceOutcome::Materialized {
                realized: r,
                samples,
                stats,
            } => {
                stats_by_source.insert(r.name.clone(), stats);
                realized.push(r);
                all.extend(samples);
            }
        }
    }
    let total_rows = realized.iter().map(|r| r.rows_kept).sum();
    Ok((
        all,
        RealizedManifest {
            seed: manifest.seed,
            mode: manifest.mode,
            total_rows,
            sources: realized,
        },
        stats_by_source,
    ))
}

fn subsample(samples: Vec<Sample>, spec: &SourceSpec, seed: u64, mode: SamplingMode) -> Vec<Sample> {
    if spec.fraction >= 1.0 {
        return samples;
    }
    match mode {
        SamplingMode::CountExact => {
            let keep = exact_subset(samples.len(), spec.fraction, seed, &spec.name);
            let keep_set: HashSet<usize> = keep.into_iter().collect();
            samples
                .into_iter()
                .enumerate()
                .filter_map(|(i, s)| keep_set.contains(&i).then_some(s))
                .collect()
        }
        SamplingMode::HashBased => samples
            .into_iter()
            .filter(|s| included_by_hash(seed, &s.id, spec.fraction))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Group;
    use std::io::Write as _;

    fn write_jsonl_file(dir: &Path, name: &str, lines: &[Value]) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        path
    }

    fn waveui_row(i: usize) -> Value {
        serde_json::json!({
            "image": format!("screens/{i}.png"),
            "resolution": [1000, 2000],
            "bbox": [100 + i, 200, 300 + i, 400],
            "instruction": format!("tap item {i}"),
            "description": format!("item row {i}"),
            "purpose": format!("opens item {i}"),
            "expectation": format!("item {i} opens"),
            "name": format!("item {i}")
        })
    }

    fn spec_for(path: PathBuf, name: &str, format: SourceFormat, fraction: f64) -> SourceSpec {
        SourceSpec {
            name: name.into(),
            format,
            path: Some(path),
            fraction,
            rows: None,
            task_map: None,
        }
    }

    #[test]
    fn waveui_row_emits_all_mapped_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_jsonl_file(dir.path(), "w.jsonl", &[waveui_row(0)]);
        let spec = spec_for(path, "waveui", SourceFormat::Waveui, 1.0);
        let (samples, stats) = convert(&spec).unwrap();
        assert_eq!(stats.rows_read, 1);
        assert_eq!(samples.len(), 5);
        let action = samples.iter().find(|s| s.task == TaskKind::AgentAction).unwrap();
        assert_eq!(action.prompt, "tap item 0");
        assert_eq!(action.target_boxes.len(), 1);
        assert_eq!(action.target_boxes[0], BBox::new(0.1, 0.1, 0.3, 0.2).unwrap());
        for s in &samples {
            s.validate().unwrap();
        }
    }

    #[test]
    fn task_map_restricts_emitted_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_jsonl_file(dir.path(), "w.jsonl", &[waveui_row(0)]);
        let mut spec = spec_for(path, "waveui-cap", SourceFormat::Waveui, 1.0);
        spec.task_map = Some(vec![TaskKind::ElementCaption]);
        let (samples, _) = convert(&spec).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].task, TaskKind::ElementCaption);
        assert_eq!(samples[0].direction, Direction::Annotation);
        assert_eq!(samples[0].target_text.as_deref(), Some("item row 0"));
    }

    #[test]
    fn amex_functionality_becomes_agent_action() {
        let dir = tempfile::tempdir().unwrap();
        let row = serde_json::json!({
            "image": "amex/1.png",
            "image_size": [1080, 1920],
            "bbox": [540, 960, 640, 1060],
            "functionality": "opens the share dialog"
        });
        let path = write_jsonl_file(dir.path(), "a.jsonl", &[row]);
        let (samples, _) = convert(&spec_for(path, "amex-func", SourceFormat::Amex, 1.0)).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].task, TaskKind::AgentAction);
        assert_eq!(samples[0].prompt, "opens the share dialog");
        assert_eq!(samples[0].meta_text(), Some("opens the share dialog"));
    }

    #[test]
    fn out_of_range_bbox_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let bad = serde_json::json!({
            "image": "x.png",
            "resolution": [100, 100],
            "bbox": [0, 0, 150, 50],   // x2 normalizes to 1.5
            "instruction": "tap"
        });
        let path = write_jsonl_file(dir.path(), "w.jsonl", &[bad, waveui_row(1)]);
        let (samples, stats) = convert(&spec_for(path, "w", SourceFormat::Waveui, 1.0)).unwrap();
        assert_eq!(samples.len(), 5); // only the good row
        assert_eq!(stats.skips.len(), 1);
        let (reason, count) = stats.skips.iter().next().unwrap();
        assert!(reason.contains("bbox"), "{reason}");
        assert_eq!(*count, 1);
    }

    #[test]
    fn screenqa_rows_become_qa_samples() {
        let dir = tempfile::tempdir().unwrap();
        let row = serde_json::json!({
            "image": "q.png",
            "resolution": [800, 600],
            "question": "What app is open?",
            "answer": "Settings"
        });
        let path = write_jsonl_file(dir.path(), "q.jsonl", &[row]);
        let (samples, _) =
            convert(&spec_for(path, "screenqa", SourceFormat::Screenqa, 1.0)).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].task, TaskKind::QuestionAnswering);
        assert_eq!(samples[0].source, "screenqa");
    }

    #[test]
    fn amex_detection_rows() {
        let dir = tempfile::tempdir().unwrap();
        let row = serde_json::json!({
            "image": "s.png",
            "image_size": [100, 100],
            "clickable_bboxes": [[0, 0, 50, 50], [50, 50, 100, 100]]
        });
        let path = write_jsonl_file(dir.path(), "a.jsonl", &[row]);
        let (samples, _) = convert(&spec_for(path, "amex-od", SourceFormat::Amex, 1.0)).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].task, TaskKind::ObjectDetection);
        assert_eq!(samples[0].target_boxes.len(), 2);
    }

    fn bench_case(command: &str, gt: BBox) -> BenchmarkCase {
        BenchmarkCase {
            id: format!("b-{command}"),
            image_ref: "bench/missing.png".into(),
            command: command.into(),
            gt_box: gt,
            group: Group::Flat,
            element_class: None,
        }
    }

    fn sample_with(text: &str, bbox: BBox) -> Sample {
        let spec = SourceSpec {
            name: "t".into(),
            format: SourceFormat::Waveui,
            path: None,
            fraction: 1.0,
            rows: Some(0),
            task_map: None,
        };
        raw_element_sample(
            &spec,
            0,
            taskgen::ScreenRef {
                image_ref: "train/img.png",
                image_w: 100,
                image_h: 100,
            },
            bbox,
            TaskKind::AgentAction,
            Direction::Grounding,
            text,
        )
    }

    #[test]
    fn contamination_matches_text_with_high_iou() {
        let gt = BBox::new(0.2, 0.2, 0.4, 0.4).unwrap();
        let index = BenchmarkIndex::build(&[bench_case("Open Cart", gt)]);
        // same command (case-insensitive), nearly identical box: dropped
        let near = BBox::new(0.2, 0.2, 0.4, 0.41).unwrap();
        assert!(near.iou(&gt) >= 0.9);
        let (kept, report) =
            contamination_filter(vec![sample_with("open  cart", near)], &index);
        assert!(kept.is_empty());
        assert_eq!(report.dropped_annotation, 1);
        // same text, different place: kept
        let far = BBox::new(0.6, 0.6, 0.8, 0.8).unwrap();
        let (kept, report) = contamination_filter(vec![sample_with("open cart", far)], &index);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.dropped(), 0);
        // unrelated sample: kept
        let (kept, _) = contamination_filter(vec![sample_with("close app", near)], &index);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn contamination_matches_image_content_hash() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("shot.png");
        std::fs::write(&img, b"fake image bytes").unwrap();
        let copy = dir.path().join("copy.png");
        std::fs::write(&copy, b"fake image bytes").unwrap();

        let mut case = bench_case("anything", BBox::new(0.0, 0.0, 0.1, 0.1).unwrap());
        case.image_ref = img.to_string_lossy().into_owned();
        let index = BenchmarkIndex::build(&[case]);

        let mut contaminated = sample_with("totally different", BBox::new(0.5, 0.5, 0.6, 0.6).unwrap());
        contaminated.image_ref = copy.to_string_lossy().into_owned();
        let clean = sample_with("totally different", BBox::new(0.5, 0.5, 0.6, 0.6).unwrap());

        let (kept, report) = contamination_filter(vec![contaminated, clean], &index);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.dropped_image, 1);
    }

    #[test]
    fn contamination_filter_is_idempotent() {
        let gt = BBox::new(0.2, 0.2, 0.4, 0.4).unwrap();
        let index = BenchmarkIndex::build(&[bench_case("open cart", gt)]);
        let samples: Vec<Sample> = (0..20)
            .map(|i| {
                let off = f64::from(i) * 0.01;
                sample_with(
                    if i % 2 == 0 { "open cart" } else { "other" },
                    BBox::new(0.2 + off, 0.2, (0.4 + off).min(1.0), 0.4).unwrap(),
                )
            })
            .collect();
        let (once, r1) = contamination_filter(samples, &index);
        let (twice, r2) = contamination_filter(once.clone(), &index);
        assert_eq!(once, twice);
        assert_eq!(r2.dropped(), 0);
        assert!(r1.dropped() > 0);
    }

    fn counts_manifest() -> MixtureManifest {
        // Row counts and use fractions of the best training configuration.
        let src = |name: &str, rows: u64, fraction: f64| SourceSpec {
            name: name.into(),
            format: SourceFormat::GenericJsonl,
            path: None,
            fraction,
            rows: Some(rows),
            task_map: None,
        };
        MixtureManifest {
            seed: 20241007,
            mode: SamplingMode::CountExact,
            sources: vec![
                src("amex-od", 98_500, 0.3),
                src("amex-functionality", 296_000, 0.5),
                src("amex-purpose", 296_000, 0.5),
                src("amex-expectation", 28_900, 1.0),
                src("waveui-commands", 44_200, 1.0),
                src("waveui-multitask", 132_600, 1.0),
                src("guicourse-web-single", 102_800, 1.0),
                src("guicourse-caption-expectation", 102_800, 1.0),
                src("rico-screenqa", 56_600, 1.0),
                src("android-control", 51_900, 1.0),
            ],
        }
    }

    #[test]
    fn declared_count_mixture_reproduces_total() {
        let (samples, realized, _) = build_mixture(&counts_manifest(), None).unwrap();
        assert!(samples.is_empty());
        assert_eq!(realized.total_rows, 845_350);
        let kept: Vec<u64> = realized.sources.iter().map(|s| s.rows_kept).collect();
        let m: BTreeMap<&str, u64> = realized
            .sources
            .iter()
            .map(|s| (s.name.as_str(), s.rows_kept))
            .collect();
        assert_eq!(m["amex-od"], 29_550);
        assert_eq!(m["amex-functionality"], 148_000);
        assert_eq!(kept.iter().sum::<u64>(), 845_350);
    }

    #[test]
    fn materialized_mixture_is_deterministic_and_count_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Value> = (0..97).map(waveui_row).collect();
        let path = write_jsonl_file(dir.path(), "w.jsonl", &rows);
        let mut spec = spec_for(path, "w", SourceFormat::Waveui, 0.5);
        spec.task_map = Some(vec![TaskKind::AgentAction]);
        let manifest = MixtureManifest {
            seed: 7,
            mode: SamplingMode::CountExact,
            sources: vec![spec],
        };
        let (a, ra, _) = build_mixture(&manifest, None).unwrap();
        let (b, rb, _) = build_mixture(&manifest, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        // |realized - fraction * n| <= 1 in count-exact mode (here: exact round)
        assert_eq!(a.len(), 49); // round(97 * 0.5)
        assert_eq!(ra.sources[0].rows_in, 97);
        assert_eq!(ra.total_rows, 49);
        let mut seed2 = manifest;
        seed2.seed = 8;
        let (c, _, _) = build_mixture(&seed2, None).unwrap();
        assert_ne!(
            a.iter().map(|s| &s.id).collect::<Vec<_>>(),
            c.iter().map(|s| &s.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn hash_mode_fraction_one_keeps_all() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Value> = (0..25).map(waveui_row).collect();
        let path = write_jsonl_file(dir.path(), "w.jsonl", &rows);
        let mut spec = spec_for(path, "w", SourceFormat::Waveui, 1.0);
        spec.task_map = Some(vec![TaskKind::AgentAction]);
        let manifest = MixtureManifest {
            seed: 7,
            mode: SamplingMode::HashBased,
            sources: vec![spec],
        };
        let (samples, realized, _) = build_mixture(&manifest, None).unwrap();
        assert_eq!(samples.len(), 25);
        assert_eq!(realized.total_rows, 25);
    }

    #[test]
    fn manifest_validation_rejects_bad_fractions() {
        let mut m = counts_manifest();
        m.sources[0].fraction = 0.0;
        assert!(m.validate().is_err());
        let mut m = counts_manifest();
        m.sources[0].fraction = 1.2;
        assert!(m.validate().is_err());
        let mut m = counts_manifest();
        m.sources[1].name = m.sources[0].name.clone();
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_round_trips_through_toml() {
        let m = counts_manifest();
        let text = toml::to_string(&m).unwrap();
        let back = MixtureManifest::parse(&text).unwrap();
        assert_eq!(back.seed, m.seed);
        assert_eq!(back.sources.len(), m.sources.len());
    }
}
