//! Failure categorization: near-miss clicks (slightly off-mark) and
//! positional bias of predicted points.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BenchmarkCase;
use crate::model::{point_in_box, BBox, Point, PredictionRecord};

pub const DEFAULT_MARGIN: f64 = 0.02;
pub const DEFAULT_GRID: usize = 4;
pub const DEFAULT_BIAS_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissClass {
    Hit,
    NearMiss,
    FarMiss,
}

/// Classify a predicted point against the ground-truth box: a hit lands
/// inside, a near miss lands within the box expanded by `margin` on each
/// side (clamped to the unit square), anything else is a far miss.
pub fn classify_miss(p: Point, gt: &BBox, margin: f64) -> MissClass {
    if point_in_box(p, gt) {
        MissClass::Hit
    } else if point_in_box(p, &gt.expand(margin)) {
        MissClass::NearMiss
    } else {
        MissClass::FarMiss
    }
}

/// Q x Q occupancy grid over normalized coordinates, row-major with y as the
/// row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialHistogram {
    pub q: usize,
    pub counts: Vec<u64>,
}

impl SpatialHistogram {
    fn new(q: usize) -> Self {
        Self {
            q,
            counts: vec![0; q * q],
        }
    }

    fn add(&mut self, p: Point) {
        let cell = |v: f64| ((v * self.q as f64).floor() as usize).min(self.q - 1);
        self.counts[cell(p.y) * self.q + cell(p.x)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn at(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.q + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalBias {
    pub histogram: SpatialHistogram,
    pub mean_point: Point,
    /// Set when the mean drifts left of / above center by more than tau.
    pub left_bias: bool,
    pub top_bias: bool,
}

/// Occupancy grid and mean of predicted points, with left/top bias flags.
pub fn positional_bias(points: &[Point], q: usize, tau: f64) -> Result<PositionalBias> {
    if points.is_empty() {
        return Err(Error::Data("positional bias needs at least one point".into()));
    }
    if q == 0 {
        return Err(Error::Config("histogram grid must be at least 1x1".into()));
    }
    let mut histogram = SpatialHistogram::new(q);
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in points {
        histogram.add(*p);
        sx += p.x;
        sy += p.y;
    }
    let n = points.len() as f64;
    let mean_point = Point {
        x: sx / n,
        y: sy / n,
    };
    Ok(PositionalBias {
        histogram,
        mean_point,
        left_bias: mean_point.x < 0.5 - tau,
        top_bias: mean_point.y < 0.5 - tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureBreakdown {
    pub n_cases: usize,
    pub total_failures: usize,
    /// Near misses: failed clicks within `margin` of the ground-truth box.
    pub missed_count: usize,
    pub far_miss_count: usize,
    pub margin: f64,
    pub near_miss_ids: Vec<String>,
    pub far_miss_ids: Vec<String>,
    /// Ids of failed cases with no prediction (only under missing-as-fail).
    pub unpredicted_ids: Vec<String>,
    /// Spatial distribution of the failed predictions' points; `None` when
    /// every case was a hit or no failed case carried a point.
    pub bias: Option<PositionalBias>,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    pub margin: f64,
    pub grid: usize,
    pub bias_tau: f64,
    pub missing_as_fail: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            grid: DEFAULT_GRID,
            bias_tau: DEFAULT_BIAS_TAU,
            missing_as_fail: false,
        }
    }
}

/// Categorize failed cases and measure where the failed clicks landed.
pub fn analyze(
    cases: &[BenchmarkCase],
    predictions: &[PredictionRecord],
    opts: AnalyzeOptions,
) -> Result<FailureBreakdown> {
    if opts.margin < 0.0 || !opts.margin.is_finite() {
        return Err(Error::Config(format!("margin must be >= 0, got {}", opts.margin)));
    }
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        p.validate()?;
        if by_id.insert(p.sample_id.as_str(), p).is_some() {
            return Err(Error::DuplicatePrediction(p.sample_id.clone()));
        }
    }
    let mut near_miss_ids = Vec::new();
    let mut far_miss_ids = Vec::new();
    let mut unpredicted_ids = Vec::new();
    let mut failed_points = Vec::new();
    for case in cases {
        match by_id.get(case.id.as_str()) {
            None if opts.missing_as_fail => unpredicted_ids.push(case.id.clone()),
            None => {
                return Err(Error::MissingPredictions(vec![case.id.clone()]));
            }
            Some(pred) => {
                let p = pred.click_point();
                match classify_miss(p, &case.gt_box, opts.margin) {
                    MissClass::Hit => {}
                    MissClass::NearMiss => {
                        near_miss_ids.push(case.id.clone());
                        failed_points.push(p);
                    }
                    MissClass::FarMiss => {
                        far_miss_ids.push(case.id.clone());
                        failed_points.push(p);
                    }
                }
            }
        }
    }
    near_miss_ids.sort_unstable();
    far_miss_ids.sort_unstable();
    unpredicted_ids.sort_unstable();
    let bias = if failed_points.is_empty() {
        None
    } else {
        Some(positional_bias(&failed_points, opts.grid, opts.bias_tau)?)
    };
    Ok(FailureBreakdown {
        n_cases: cases.len(),
        total_failures: near_miss_ids.len() + far_miss_ids.len() + unpredicted_ids.len(),
        missed_count: near_miss_ids.len(),
        far_miss_count: far_miss_ids.len(),
        margin: opts.margin,
        near_miss_ids,
        far_miss_ids,
        unpredicted_ids,
        bias,
    })
}

/// Plain-text rendering of a breakdown, histogram included.
pub fn render_failure_text(b: &FailureBreakdown) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "failures: {} of {} cases ({} near-miss within margin {}, {} far-miss{})",
        b.total_failures,
        b.n_cases,
        b.missed_count,
        b.margin,
        b.far_miss_count,
        if b.unpredicted_ids.is_empty() {
            String::new()
        } else {
            format!(", {} unpredicted", b.unpredicted_ids.len())
        }
    );
    if let Some(bias) = &b.bias {
        let _ = writeln!(
            s,
            "failed-click mean point: ({:.3}, {:.3}){}{}",
            bias.mean_point.x,
            bias.mean_point.y,
            if bias.left_bias { "  [left bias]" } else { "" },
            if bias.top_bias { "  [top bias]" } else { "" },
        );
        let _ = writeln!(s, "failed-click grid ({0}x{0}):", bias.histogram.q);
        for row in 0..bias.histogram.q {
            let cells: Vec<String> = (0..bias.histogram.q)
                .map(|col| format!("{:>6}", bias.histogram.at(col, row)))
                .collect();
            let _ = writeln!(s, "  {}", cells.join(" "));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Group;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn pt(x: f64, y: f64) -> Point {
        Point::new(x, y).unwrap()
    }

    #[test]
    fn classify_examples() {
        let gt = bx(0.2, 0.2, 0.4, 0.4);
        assert_eq!(classify_miss(gt.center(), &gt, 0.02), MissClass::Hit);
        // expanded box is (0.18,0.18)-(0.42,0.42)
        assert_eq!(classify_miss(pt(0.41, 0.3), &gt, 0.02), MissClass::NearMiss);
        assert_eq!(classify_miss(pt(0.9, 0.9), &gt, 0.02), MissClass::FarMiss);
    }

    #[test]
    fn zero_margin_admits_no_near_miss() {
        let gt = bx(0.2, 0.2, 0.4, 0.4);
        for (x, y) in [(0.1, 0.1), (0.25, 0.25), (0.400001, 0.3), (1.0, 1.0)] {
            let c = classify_miss(pt(x, y), &gt, 0.0);
            assert_ne!(c, MissClass::NearMiss, "({x},{y})");
        }
    }

    #[test]
    fn growing_margin_never_demotes() {
        let gt = bx(0.4, 0.4, 0.6, 0.6);
        let p = pt(0.65, 0.5);
        let mut best = classify_miss(p, &gt, 0.0);
        for m in [0.01, 0.04, 0.05, 0.1, 0.5] {
            let c = classify_miss(p, &gt, m);
            let rank = |c: &MissClass| match c {
                MissClass::Hit => 0,
                MissClass::NearMiss => 1,
                MissClass::FarMiss => 2,
            };
            assert!(rank(&c) <= rank(&best));
            best = c;
        }
    }

    #[test]
    fn bias_flags_on_top_left_mass() {
        let points = vec![pt(0.05, 0.05); 10];
        let b = positional_bias(&points, 4, DEFAULT_BIAS_TAU).unwrap();
        assert!(b.left_bias && b.top_bias);
        assert_eq!(b.histogram.at(0, 0), 10);
        assert_eq!(b.histogram.total(), 10);
    }

    #[test]
    fn centered_points_have_no_bias() {
        let points = vec![pt(0.5, 0.5); 7];
        let b = positional_bias(&points, 4, DEFAULT_BIAS_TAU).unwrap();
        assert!(!b.left_bias && !b.top_bias);
        assert_eq!(b.mean_point, pt(0.5, 0.5));
    }

    #[test]
    fn uniform_points_have_mean_near_center() {
        use rand::Rng;
        let mut rng = crate::sampling::seeded_rng(2024, "bias-uniform");
        let points: Vec<Point> = (0..10_000)
            .map(|_| pt(rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let b = positional_bias(&points, 4, DEFAULT_BIAS_TAU).unwrap();
        assert!((b.mean_point.x - 0.5).abs() < 0.02);
        assert!((b.mean_point.y - 0.5).abs() < 0.02);
        assert!(!b.left_bias && !b.top_bias);
    }

    #[test]
    fn histogram_totals_conserved_for_any_grid() {
        use rand::Rng;
        let mut rng = crate::sampling::seeded_rng(5, "grid");
        let points: Vec<Point> = (0..257)
            .map(|_| pt(rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        for q in [1, 2, 4, 7, 16] {
            let b = positional_bias(&points, q, DEFAULT_BIAS_TAU).unwrap();
            assert_eq!(b.histogram.total(), 257);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(positional_bias(&[], 4, DEFAULT_BIAS_TAU).is_err());
    }

    #[test]
    fn analyze_counts_categories() {
        let gt = bx(0.2, 0.2, 0.4, 0.4);
        let cases: Vec<BenchmarkCase> = (0..4)
            .map(|i| BenchmarkCase {
                id: format!("c{i}"),
                image_ref: "s.png".into(),
                command: "go".into(),
                gt_box: gt,
                group: Group::Flat,
                element_class: None,
            })
            .collect();
        let preds = vec![
            PredictionRecord::from_point("c0", gt.center()),
            PredictionRecord::from_point("c1", pt(0.41, 0.3)),
            PredictionRecord::from_point("c2", pt(0.9, 0.9)),
            PredictionRecord::from_point("c3", pt(0.05, 0.05)),
        ];
        let b = analyze(&cases, &preds, AnalyzeOptions::default()).unwrap();
        assert_eq!(b.total_failures, 3);
        assert_eq!(b.missed_count, 1);
        assert_eq!(b.far_miss_count, 2);
        assert_eq!(b.near_miss_ids, vec!["c1".to_string()]);
        let bias = b.bias.unwrap();
        assert_eq!(bias.histogram.total(), 3);
    }

    #[test]
    fn analyze_missing_policy() {
        let cases = vec![BenchmarkCase {
            id: "only".into(),
            image_ref: "s.png".into(),
            command: "go".into(),
            gt_box: bx(0.0, 0.0, 0.1, 0.1),
            group: Group::Flat,
            element_class: None,
        }];
        assert!(analyze(&cases, &[], AnalyzeOptions::default()).is_err());
        let b = analyze(
            &cases,
            &[],
            AnalyzeOptions {
                missing_as_fail: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(b.total_failures, 1);
        assert_eq!(b.unpredicted_ids, vec!["only".to_string()]);
        assert!(b.bias.is_none());
    }
}
