//! Prediction backends: a uniform interface so the eval harness runs with or
//! without model weights. Replay files, a remote HTTP endpoint, and two
//! analytic baselines (screen center, seeded uniform random).

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BenchmarkCase;
use crate::loc::TokenFormat;
use crate::model::{read_predictions, BBox, Point, PredictionRecord};
use crate::sampling::{seeded_rng, stable_hash64};

pub enum Backend {
    Replay(ReplayBackend),
    Remote(RemoteBackend),
    CenterBaseline,
    RandomBaseline(RandomBaseline),
}

impl Backend {
    /// Produce one prediction for a case. Pure for replay and the baselines;
    /// the remote backend performs one HTTP round trip.
    pub fn predict(&self, case: &BenchmarkCase) -> Result<PredictionRecord> {
        match self {
            Backend::Replay(b) => b.predict(case),
            Backend::Remote(b) => b.predict(case),
            Backend::CenterBaseline => Ok(PredictionRecord::from_point(
                &case.id,
                Point { x: 0.5, y: 0.5 },
            )),
            Backend::RandomBaseline(b) => Ok(b.predict(case)),
        }
    }

    /// Parse a backend descriptor: `replay:<path>`, `remote:<url>`,
    /// `center`, or `random:<seed>`.
    pub fn from_descriptor(descriptor: &str) -> Result<Backend> {
        let (kind, arg) = match descriptor.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (descriptor, None),
        };
        match (kind, arg) {
            ("replay", Some(path)) => Ok(Backend::Replay(ReplayBackend::from_path(Path::new(
                path,
            ))?)),
            ("remote", Some(url)) => Ok(Backend::Remote(RemoteBackend::new(
                url,
                Duration::from_secs(30),
            )?)),
            ("center", None) => Ok(Backend::CenterBaseline),
            ("random", Some(seed)) => {
                let seed: u64 = seed
                    .parse()
                    .map_err(|_| Error::Config(format!("bad random seed {seed:?}")))?;
                Ok(Backend::RandomBaseline(RandomBaseline { seed }))
            }
            ("random", None) => Ok(Backend::RandomBaseline(RandomBaseline { seed: 0 })),
            _ => Err(Error::Config(format!(
                "unknown backend {descriptor:?}; expected replay:<path>, remote:<url>, center or random:<seed>"
            ))),
        }
    }
}

/// Replays a PredictionRecord JSONL file keyed by sample id.
pub struct ReplayBackend {
    records: HashMap<String, PredictionRecord>,
}

impl ReplayBackend {
    pub fn from_path(path: &Path) -> Result<Self> {
        let records = read_predictions(path)?
            .into_iter()
            .map(|p| (p.sample_id.clone(), p))
            .collect();
        Ok(Self { records })
    }

    pub fn predict(&self, case: &BenchmarkCase) -> Result<PredictionRecord> {
        self.records
            .get(&case.id)
            .cloned()
            .ok_or_else(|| Error::MissingPredictions(vec![case.id.clone()]))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Seeded uniform click point, derived per case id so prediction order does
/// not matter.
pub struct RandomBaseline {
    pub seed: u64,
}

impl RandomBaseline {
    pub fn predict(&self, case: &BenchmarkCase) -> PredictionRecord {
        let mut rng = seeded_rng(stable_hash64(self.seed, &case.id), "random-baseline");
        PredictionRecord::from_point(
            &case.id,
            Point {
                x: rng.gen::<f64>(),
                y: rng.gen::<f64>(),
            },
        )
    }
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    image_b64: &'a str,
    command: &'a str,
}

#[derive(Deserialize)]
struct PredictResponse {
    point: Option<[f64; 2]>,
    #[serde(rename = "box")]
    bbox: Option<[f64; 4]>,
    text: Option<String>,
}

/// POSTs `{image_b64, command}` to `<endpoint>/predict` and accepts a point,
/// a box, or raw location-token text back. Shares the annotation client's
/// image transport (base64 in a JSON body) and auth environment variable.
pub struct RemoteBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
    auth: Option<String>,
    format: TokenFormat,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self> {
        if timeout.is_zero() {
            return Err(Error::Config("remote timeout must be positive".into()));
        }
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_owned(),
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .map_err(|e| Error::Http(e.to_string()))?,
            auth: std::env::var(crate::augment::AUTH_TOKEN_ENV).ok(),
            format: TokenFormat::default(),
        })
    }

    pub fn predict(&self, case: &BenchmarkCase) -> Result<PredictionRecord> {
        let image = std::fs::read(&case.image_ref)
            .map_err(|e| Error::io(case.image_ref.clone(), e))?;
        let image_b64 = base64::engine::general_purpose::STANDARD.encode(image);
        let mut request = self
            .client
            .post(format!("{}/predict", self.endpoint))
            .json(&PredictRequest {
                image_b64: &image_b64,
                command: &case.command,
            });
        if let Some(token) = &self.auth {
            request = request.bearer_auth(token);
        }
        let resp = request.send().map_err(|e| Error::Http(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Http(format!(
                "{}: predict returned status {}",
                case.id,
                resp.status().as_u16()
            )));
        }
        let body: PredictResponse = resp
            .json()
            .map_err(|e| Error::Http(format!("{}: bad predict body: {e}", case.id)))?;
        self.to_record(&case.id, body)
    }

    fn to_record(&self, id: &str, body: PredictResponse) -> Result<PredictionRecord> {
        if let Some([x, y]) = body.point {
            return Ok(PredictionRecord::from_point(id, Point::new(x, y)?));
        }
        if let Some([x1, y1, x2, y2]) = body.bbox {
            return Ok(PredictionRecord::from_box(id, BBox::new(x1, y1, x2, y2)?));
        }
        if let Some(text) = body.text {
            let parsed = self.format.parse_locations(&text);
            if let Some(p) = parsed.as_point() {
                return Ok(PredictionRecord::from_point(id, p));
            }
            if let Some(b) = parsed.as_box() {
                return Ok(PredictionRecord::from_box(id, b));
            }
            return Err(Error::Http(format!(
                "{id}: predict text {text:?} is neither a 2-token point nor a 4-token box"
            )));
        }
        Err(Error::Http(format!(
            "{id}: predict response has neither point, box nor text"
        )))
    }
}

/// Run every case through the backend, collecting error records per id.
pub fn predict_all(
    backend: &Backend,
    cases: &[BenchmarkCase],
) -> (Vec<PredictionRecord>, Vec<(String, String)>) {
    let mut predictions = Vec::with_capacity(cases.len());
    let mut errors = Vec::new();
    for case in cases {
        match backend.predict(case) {
            Ok(p) => predictions.push(p),
            Err(e) => errors.push((case.id.clone(), e.to_string())),
        }
    }
    (predictions, errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Wall-clock per-prediction latency over `repetitions` passes of the cases.
/// For remote backends this measures end to end, network included.
pub fn measure_latency(
    backend: &Backend,
    cases: &[BenchmarkCase],
    repetitions: u32,
) -> Result<LatencyStats> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    if cases.is_empty() {
        return Err(Error::Data("latency measurement needs cases".into()));
    }
    let mut timings_ms = Vec::with_capacity(cases.len() * repetitions as usize);
    for _ in 0..repetitions {
        for case in cases {
            let start = Instant::now();
            let _ = backend.predict(case)?;
            timings_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    timings_ms.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = timings_ms.len();
    let mean_ms = timings_ms.iter().sum::<f64>() / n as f64;
    let p95_idx = ((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1;
    Ok(LatencyStats {
        n,
        mean_ms,
        p95_ms: timings_ms[p95_idx],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Group;

    fn case(id: &str, gt: BBox) -> BenchmarkCase {
        BenchmarkCase {
            id: id.into(),
            image_ref: "missing.png".into(),
            command: "tap".into(),
            gt_box: gt,
            group: Group::Flat,
            element_class: None,
        }
    }

    fn unit_box() -> BBox {
        BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn center_baseline_always_returns_center() {
        let backend = Backend::CenterBaseline;
        for id in ["a", "b", "c"] {
            let p = backend.predict(&case(id, unit_box())).unwrap();
            assert_eq!(p.point, Some(Point { x: 0.5, y: 0.5 }));
            assert_eq!(p.sample_id, id);
        }
    }

    #[test]
    fn replay_returns_stored_record_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let rec = PredictionRecord::from_point("a", Point::new(0.3, 0.3).unwrap());
        crate::model::write_jsonl(&path, [&rec]).unwrap();
        let backend = Backend::Replay(ReplayBackend::from_path(&path).unwrap());
        let got = backend.predict(&case("a", unit_box())).unwrap();
        assert_eq!(got, rec);
        // miss is an error naming the id
        let err = backend.predict(&case("zzz", unit_box())).unwrap_err();
        assert!(matches!(err, Error::MissingPredictions(ids) if ids == vec!["zzz".to_string()]));
    }

    #[test]
    fn replay_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let rec = PredictionRecord::from_box("a", BBox::new(0.1, 0.1, 0.2, 0.2).unwrap());
        crate::model::write_jsonl(&path, [&rec]).unwrap();
        let backend = ReplayBackend::from_path(&path).unwrap();
        let a = backend.predict(&case("a", unit_box())).unwrap();
        let b = backend.predict(&case("a", unit_box())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_baseline_reproducible_and_order_free() {
        let b = RandomBaseline { seed: 99 };
        let p1 = b.predict(&case("x", unit_box()));
        let p2 = b.predict(&case("x", unit_box()));
        assert_eq!(p1, p2);
        let other = b.predict(&case("y", unit_box()));
        assert_ne!(p1.point, other.point);
        let reseeded = RandomBaseline { seed: 100 };
        assert_ne!(p1.point, reseeded.predict(&case("x", unit_box())).point);
    }

    #[test]
    fn predict_does_not_mutate_case() {
        let c = case("a", BBox::new(0.2, 0.2, 0.3, 0.3).unwrap());
        let copy = c.clone();
        let _ = Backend::CenterBaseline.predict(&c).unwrap();
        let _ = Backend::RandomBaseline(RandomBaseline { seed: 1 }).predict(&c);
        assert_eq!(c, copy);
    }

    #[test]
    fn descriptor_parsing() {
        assert!(matches!(
            Backend::from_descriptor("center").unwrap(),
            Backend::CenterBaseline
        ));
        assert!(matches!(
            Backend::from_descriptor("random:7").unwrap(),
            Backend::RandomBaseline(RandomBaseline { seed: 7 })
        ));
        assert!(Backend::from_descriptor("nope").is_err());
        assert!(Backend::from_descriptor("random:abc").is_err());
    }

    #[test]
    fn replay_latency_is_fast_and_single_sample_p95() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let rec = PredictionRecord::from_point("a", Point::new(0.3, 0.3).unwrap());
        crate::model::write_jsonl(&path, [&rec]).unwrap();
        let backend = Backend::Replay(ReplayBackend::from_path(&path).unwrap());
        let cases = vec![case("a", unit_box())];
        let stats = measure_latency(&backend, &cases, 1).unwrap();
        assert_eq!(stats.n, 1);
        assert_eq!(stats.mean_ms, stats.p95_ms);
        let stats = measure_latency(&backend, &cases, 50).unwrap();
        assert!(stats.mean_ms < 10.0, "local lookup took {} ms", stats.mean_ms);
    }

    #[test]
    fn remote_backend_against_mock() {
        let server = crate::augment::mock::MockServer::start("unused").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("shot.png");
        std::fs::write(&img, b"bytes").unwrap();
        let mut c = case("a", unit_box());
        c.image_ref = img.to_string_lossy().into_owned();

        let backend = RemoteBackend::new(&server.url(), Duration::from_secs(5)).unwrap();
        let p = backend.predict(&c).unwrap();
        assert_eq!(p.point, Some(Point { x: 0.5, y: 0.5 }));

        server.set_predict_body(r#"{"box":[0.1,0.2,0.3,0.4]}"#);
        let p = backend.predict(&c).unwrap();
        assert_eq!(p.bbox, Some(BBox::new(0.1, 0.2, 0.3, 0.4).unwrap()));

        server.set_predict_body(r#"{"text":"<loc_100><loc_200>"}"#);
        let p = backend.predict(&c).unwrap();
        assert_eq!(p.point, Some(Point::new(0.1005, 0.2005).unwrap()));

        server.set_predict_body(r#"{"text":"no tokens"}"#);
        assert!(backend.predict(&c).is_err());
    }

    #[test]
    fn remote_latency_includes_injected_delay() {
        let server = crate::augment::mock::MockServer::start("unused").unwrap();
        server.set_delay(Duration::from_millis(100));
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("shot.png");
        std::fs::write(&img, b"bytes").unwrap();
        let mut c = case("a", unit_box());
        c.image_ref = img.to_string_lossy().into_owned();
        let backend = Backend::Remote(RemoteBackend::new(&server.url(), Duration::from_secs(5)).unwrap());
        let stats = measure_latency(&backend, &[c], 3).unwrap();
        assert!(
            (100.0..150.0).contains(&stats.mean_ms),
            "mean {} ms",
            stats.mean_ms
        );
    }
}
