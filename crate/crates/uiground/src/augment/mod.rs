//! MLLM-based data augmentation: annotates command corpora with purposes,
//! captions and expectations by calling a vision-capable chat-completion
//! endpoint.
//!
//! The client is endpoint-agnostic: any server speaking the chat-completions
//! wire shape (messages with base64 data-URL images, text reply in
//! `choices[0].message.content`) works. Results are cached one file per
//! (sample, field, model, prompt) so million-row jobs resume for free, and a
//! shared token bucket keeps the request rate under the configured limit.

pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{BBox, Sample};

/// Environment variable holding the bearer token sent to the endpoint.
pub const AUTH_TOKEN_ENV: &str = "UIGROUND_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationField {
    Purpose,
    Caption,
    Expectation,
}

impl AnnotationField {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationField::Purpose => "purpose",
            AnnotationField::Caption => "caption",
            AnnotationField::Expectation => "expectation",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "purpose" => Ok(AnnotationField::Purpose),
            "caption" => Ok(AnnotationField::Caption),
            "expectation" => Ok(AnnotationField::Expectation),
            other => Err(Error::Config(format!("unknown annotation field {other:?}"))),
        }
    }
}

impl fmt::Display for AnnotationField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the element is indicated to the MLLM: a crop of the element sent
/// alongside the full screenshot (default, leaves the screenshot untouched)
/// or a marker rectangle drawn onto the screenshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementStyle {
    #[default]
    CropPlusContext,
    Marker,
}

/// Field-specific instruction texts. The defaults mirror the field semantics
/// of MLLM-annotated UI corpora; override per deployment with a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptPack {
    pub purpose: String,
    pub caption: String,
    pub expectation: String,
}

impl Default for PromptPack {
    fn default() -> Self {
        Self {
            purpose: "The second image is a crop of the UI element of interest from the \
                      screenshot in the first image. State the purpose of this UI element \
                      in one short sentence."
                .into(),
            caption: "The second image is a crop of the UI element of interest from the \
                      screenshot in the first image. Describe this UI element in one short \
                      sentence."
                .into(),
            expectation: "The second image is a crop of the UI element of interest from the \
                          screenshot in the first image. State in one short sentence what is \
                          expected to happen after clicking this UI element."
                .into(),
        }
    }
}

impl PromptPack {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("prompt pack: {e}")))
    }

    pub fn instruction(&self, field: AnnotationField) -> &str {
        match field {
            AnnotationField::Purpose => &self.purpose,
            AnnotationField::Caption => &self.caption,
            AnnotationField::Expectation => &self.expectation,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
        }
    }
}

/// One annotation batch job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentJob {
    /// Unified sample JSONL to annotate.
    pub input: PathBuf,
    pub fields: Vec<AnnotationField>,
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Requests per second across all workers.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub element_style: ElementStyle,
    #[serde(default = "default_max_len")]
    pub max_response_len: usize,
    #[serde(default = "default_refusals")]
    pub refusal_phrases: Vec<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_concurrency() -> usize {
    4
}
fn default_rate_limit() -> f64 {
    10.0
}
fn default_max_len() -> usize {
    500
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_refusals() -> Vec<String> {
    ["i'm sorry", "i cannot", "i can't", "as an ai"]
        .into_iter()
        .map(String::from)
        .collect()
}

impl AugmentJob {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let job: AugmentJob =
            toml::from_str(&text).map_err(|e| Error::Config(format!("augment job: {e}")))?;
        job.validate()?;
        Ok(job)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Config("augment job requests no fields".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        if !(self.rate_limit > 0.0) {
            return Err(Error::Config("rate_limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Rejected,
    Error,
}

/// Outcome of one (sample, field) annotation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentResult {
    pub sample_id: String,
    pub field: AnnotationField,
    pub text: String,
    pub model_name: String,
    pub prompt_hash: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AnnotateStats {
    /// (sample, field) pairs considered.
    pub requested: u64,
    /// Pairs answered from the cache without any network traffic.
    pub cache_hits: u64,
    pub ok: u64,
    pub rejected: u64,
    pub errors: u64,
    /// HTTP requests actually sent, retries included.
    pub http_requests: u64,
}

/// Spacing-based token bucket: back-to-back acquisitions are at least
/// `1/rate` apart, so the measured request rate never exceeds the limit.
struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    fn new(rate_per_sec: f64) -> Self {
        Self {
            min_interval: Duration::from_secs_f64(1.0 / rate_per_sec),
            next_slot: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.min_interval;
            slot.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

fn cache_key(sample_id: &str, field: AnnotationField, model: &str, prompt_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(sample_id.as_bytes());
    h.update(b"|");
    h.update(field.as_str().as_bytes());
    h.update(b"|");
    h.update(model.as_bytes());
    h.update(b"|");
    h.update(prompt_hash.as_bytes());
    hex::encode(h.finalize())
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(&key[..2]).join(format!("{key}.json"))
}

fn cache_read(dir: &Path, key: &str) -> Option<AugmentResult> {
    let bytes = std::fs::read(cache_path(dir, key)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// Write-temp-then-rename so concurrent workers never expose a torn entry.
fn cache_write(dir: &Path, key: &str, result: &AugmentResult) -> Result<()> {
    let path = cache_path(dir, key);
    let parent = path.parent().expect("cache path has a parent");
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        &key[..16]
    ));
    std::fs::write(&tmp, serde_json::to_vec(result)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Request construction
// ---------------------------------------------------------------------------

fn data_url(png_bytes: &[u8]) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png_bytes)
    )
}

/// Base64 PNG payloads sent for one element: the screenshot (pristine or
/// marked, per style) and optionally the element crop.
struct ElementImages {
    screenshot: Vec<u8>,
    crop: Option<Vec<u8>>,
}

fn prepare_images(image_path: &Path, bbox: &BBox, style: ElementStyle) -> Result<ElementImages> {
    let bytes = std::fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Data(format!("{}: image decode: {e}", image_path.display())))?;
    let (w, h) = (img.width(), img.height());
    let px = |v: f64, extent: u32| ((v * f64::from(extent)).round() as u32).min(extent);
    let (x1, y1, x2, y2) = (px(bbox.x1, w), px(bbox.y1, h), px(bbox.x2, w), px(bbox.y2, h));
    let (cw, ch) = ((x2 - x1).max(1).min(w - x1.min(w - 1)), (y2 - y1).max(1).min(h - y1.min(h - 1)));
    match style {
        ElementStyle::CropPlusContext => {
            let crop = img.crop_imm(x1.min(w - 1), y1.min(h - 1), cw, ch);
            Ok(ElementImages {
                screenshot: encode_png(&img)?,
                crop: Some(encode_png(&crop)?),
            })
        }
        ElementStyle::Marker => {
            let mut marked = img.to_rgba8();
            let red = image::Rgba([255u8, 0, 0, 255]);
            let (bx2, by2) = ((x1 + cw).min(w), (y1 + ch).min(h));
            for t in 0..3u32 {
                for x in x1..bx2 {
                    for y in [y1.saturating_add(t), by2.saturating_sub(t + 1)] {
                        if y < h {
                            marked.put_pixel(x, y, red);
                        }
                    }
                }
                for y in y1..by2 {
                    for x in [x1.saturating_add(t), bx2.saturating_sub(t + 1)] {
                        if x < w {
                            marked.put_pixel(x, y, red);
                        }
                    }
                }
            }
            Ok(ElementImages {
                screenshot: encode_png(&image::DynamicImage::ImageRgba8(marked))?,
                crop: None,
            })
        }
    }
}

fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("png encode: {e}")))?;
    Ok(buf.into_inner())
}

fn chat_request_body(
    model: &str,
    instruction: &str,
    images: &ElementImages,
) -> serde_json::Value {
    let mut content = vec![serde_json::json!({ "type": "text", "text": instruction })];
    content.push(serde_json::json!({
        "type": "image_url",
        "image_url": { "url": data_url(&images.screenshot) }
    }));
    if let Some(crop) = &images.crop {
        content.push(serde_json::json!({
            "type": "image_url",
            "image_url": { "url": data_url(crop) }
        }));
    }
    serde_json::json!({
        "model": model,
        "messages": [{ "role": "user", "content": content }],
        "max_tokens": 128
    })
}

fn prompt_hash(instruction: &str, style: ElementStyle, bbox: &BBox) -> String {
    let mut h = Sha256::new();
    h.update(instruction.as_bytes());
    h.update(format!("|{style:?}|{:.6},{:.6},{:.6},{:.6}", bbox.x1, bbox.y1, bbox.x2, bbox.y2));
    hex::encode(&h.finalize()[..8])
}

// ---------------------------------------------------------------------------
// Annotation driver
// ---------------------------------------------------------------------------

struct WorkItem<'a> {
    sample: &'a Sample,
    field: AnnotationField,
}

/// Annotate each eligible input sample with every requested field.
///
/// Eligible samples carry an image ref and at least one target box. Cached
/// entries are replayed without network traffic; transient HTTP failures are
/// retried with exponential backoff and then reported as `status = error`
/// (and not cached, so a rerun retries them).
pub fn annotate(
    job: &AugmentJob,
    samples: &[Sample],
    prompts: &PromptPack,
) -> Result<(Vec<AugmentResult>, AnnotateStats)> {
    job.validate()?;
    let items: Vec<WorkItem> = samples
        .iter()
        .filter(|s| !s.image_ref.is_empty() && !s.target_boxes.is_empty())
        .flat_map(|s| {
            job.fields.iter().map(move |f| WorkItem {
                sample: s,
                field: *f,
            })
        })
        .collect();

    let limiter = RateLimiter::new(job.rate_limit);
    let cursor = AtomicUsize::new(0);
    let http_requests = AtomicU64::new(0);
    let cache_hits = AtomicU64::new(0);
    let results: Mutex<Vec<(usize, AugmentResult)>> = Mutex::new(Vec::with_capacity(items.len()));
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(job.timeout_ms))
        .build()
        .map_err(|e| Error::Http(e.to_string()))?;
    let auth = std::env::var(AUTH_TOKEN_ENV).ok();

    let workers = job.max_concurrency.min(items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                let item = &items[idx];
                let result = annotate_one(
                    job,
                    prompts,
                    item,
                    &client,
                    auth.as_deref(),
                    &limiter,
                    &http_requests,
                    &cache_hits,
                );
                results.lock().unwrap().push((idx, result));
            });
        }
    });

    let mut indexed = results.into_inner().unwrap();
    indexed.sort_by_key(|(idx, _)| *idx);
    let results: Vec<AugmentResult> = indexed.into_iter().map(|(_, r)| r).collect();
    let mut stats = AnnotateStats {
        requested: items.len() as u64,
        cache_hits: cache_hits.load(Ordering::SeqCst),
        http_requests: http_requests.load(Ordering::SeqCst),
        ..Default::default()
    };
    for r in &results {
        match r.status {
            Status::Ok => stats.ok += 1,
            Status::Rejected => stats.rejected += 1,
            Status::Error => stats.errors += 1,
        }
    }
    Ok((results, stats))
}

#[allow(clippy::too_many_arguments)]
fn annotate_one(
    job: &AugmentJob,
    prompts: &PromptPack,
    item: &WorkItem<'_>,
    client: &reqwest::blocking::Client,
    auth: Option<&str>,
    limiter: &RateLimiter,
    http_requests: &AtomicU64,
    cache_hits: &AtomicU64,
) -> AugmentResult {
    let sample = item.sample;
    let bbox = sample.target_boxes[0];
    let instruction = prompts.instruction(item.field);
    let phash = prompt_hash(instruction, job.element_style, &bbox);
    let key = cache_key(&sample.id, item.field, &job.model_name, &phash);
    if let Some(cached) = cache_read(&job.cache_dir, &key) {
        cache_hits.fetch_add(1, Ordering::SeqCst);
        return cached;
    }

    let base = AugmentResult {
        sample_id: sample.id.clone(),
        field: item.field,
        text: String::new(),
        model_name: job.model_name.clone(),
        prompt_hash: phash,
        status: Status::Error,
        reason: None,
    };

    let images = match prepare_images(Path::new(&sample.image_ref), &bbox, job.element_style) {
        Ok(images) => images,
        Err(e) => {
            return AugmentResult {
                reason: Some(e.to_string()),
                ..base
            };
        }
    };
    let body = chat_request_body(&job.model_name, instruction, &images);
    let url = format!(
        "{}/v1/chat/completions",
        job.endpoint.trim_end_matches('/')
    );

    let mut last_error = String::new();
    for attempt in 0..job.retry.max_attempts {
        if attempt > 0 {
            let backoff = job.retry.base_delay_ms.saturating_mul(1 << (attempt - 1));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        limiter.acquire();
        http_requests.fetch_add(1, Ordering::SeqCst);
        let mut request = client.post(&url).json(&body);
        if let Some(token) = auth {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Err(e) => last_error = format!("transport: {e}"),
            Ok(resp) if !resp.status().is_success() => {
                last_error = format!("http status {}", resp.status().as_u16());
            }
            Ok(resp) => {
                let text = match extract_chat_text(resp) {
                    Ok(t) => t,
                    Err(e) => {
                        last_error = e;
                        continue;
                    }
                };
                let result = validate_response(&text, job, base);
                if result.status != Status::Error {
                    if let Err(e) = cache_write(&job.cache_dir, &key, &result) {
                        eprintln!("warning: cache write failed: {e}");
                    }
                }
                return result;
            }
        }
    }
    AugmentResult {
        reason: Some(last_error),
        ..base
    }
}

fn extract_chat_text(resp: reqwest::blocking::Response) -> std::result::Result<String, String> {
    let value: serde_json::Value = resp.json().map_err(|e| format!("response body: {e}"))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_owned)
        .ok_or_else(|| "response missing choices[0].message.content".to_owned())
}

fn validate_response(text: &str, job: &AugmentJob, base: AugmentResult) -> AugmentResult {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return AugmentResult {
            status: Status::Rejected,
            reason: Some("empty response".into()),
            ..base
        };
    }
    if trimmed.chars().count() > job.max_response_len {
        return AugmentResult {
            status: Status::Rejected,
            reason: Some(format!(
                "response longer than {} chars",
                job.max_response_len
            )),
            ..base
        };
    }
    let lower = trimmed.to_lowercase();
    if let Some(phrase) = job.refusal_phrases.iter().find(|p| lower.contains(p.as_str())) {
        return AugmentResult {
            status: Status::Rejected,
            reason: Some(format!("refusal phrase {phrase:?}")),
            ..base
        };
    }
    AugmentResult {
        text: trimmed.to_owned(),
        status: Status::Ok,
        reason: None,
        ..base
    }
}

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MergeReport {
    pub attached: u64,
    pub rejected: u64,
    pub errors: u64,
    /// Duplicate (sample, field) results resolved last-write-wins.
    pub duplicates: u64,
    pub unmatched: u64,
}

/// Attach ok results to their samples as `meta` annotation fields; rejected
/// and error results leave the sample untouched. Never modifies geometry,
/// prompt or target of the inputs.
pub fn merge_annotations(
    mut samples: Vec<Sample>,
    results: &[AugmentResult],
) -> (Vec<Sample>, MergeReport) {
    let mut report = MergeReport::default();
    let mut accepted: BTreeMap<(&str, AnnotationField), &str> = BTreeMap::new();
    for r in results {
        match r.status {
            Status::Rejected => report.rejected += 1,
            Status::Error => report.errors += 1,
            Status::Ok => {
                let key = (r.sample_id.as_str(), r.field);
                if accepted.insert(key, r.text.as_str()).is_some() {
                    report.duplicates += 1;
                    eprintln!(
                        "warning: duplicate annotation for ({}, {}); keeping the later one",
                        r.sample_id, r.field
                    );
                }
            }
        }
    }
    let mut by_id: BTreeMap<&str, Vec<(AnnotationField, &str)>> = BTreeMap::new();
    for ((id, field), text) in &accepted {
        by_id.entry(id).or_default().push((*field, text));
    }
    for sample in &mut samples {
        if let Some(fields) = by_id.remove(sample.id.as_str()) {
            for (field, text) in fields {
                sample
                    .meta
                    .insert(field.as_str().to_owned(), text.to_owned());
                report.attached += 1;
            }
        }
    }
    report.unmatched = by_id.values().map(|v| v.len() as u64).sum();
    (samples, report)
}

/// Read annotation fields out of a sample's meta into an element annotation,
/// alongside the raw command text, ready for task generation.
pub fn element_annotation(sample: &Sample) -> crate::taskgen::ElementAnnotation {
    let get = |k: &str| sample.meta.get(k).cloned().filter(|v| !v.trim().is_empty());
    crate::taskgen::ElementAnnotation {
        bbox: sample.target_boxes.first().copied(),
        caption: get("caption"),
        purpose: get("purpose"),
        expectation: get("expectation"),
        command: if sample.task == crate::model::TaskKind::AgentAction {
            sample
                .meta_text()
                .map(str::to_owned)
                .or_else(|| Some(sample.prompt.clone()).filter(|p| !p.trim().is_empty()))
        } else {
            None
        },
    }
}
