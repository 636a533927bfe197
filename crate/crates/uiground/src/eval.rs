//! Benchmark scoring: the binary click-accuracy metric, group-mean
//! aggregation and Beta-posterior significance thresholds.
//!
//! A prediction scores 1 when its click point (or box center) falls within
//! the ground-truth box, 0 otherwise. The overall figure is the unweighted
//! arithmetic mean of the per-group accuracies, not the sample-weighted pool.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{point_in_box, read_jsonl, BBox, PredictionRecord};

/// Benchmark subgroup. Screenspot-style inputs use mobile/desktop/web;
/// flat-pool benchmarks use `flat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Mobile,
    Desktop,
    Web,
    Flat,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Mobile => "mobile",
            Group::Desktop => "desktop",
            Group::Web => "web",
            Group::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    Text,
    Icon,
}

impl ElementClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementClass::Text => "text",
            ElementClass::Icon => "icon",
        }
    }
}

/// One benchmark annotation: a command and the ground-truth element box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub image_ref: String,
    pub command: String,
    pub gt_box: BBox,
    pub group: Group,
    pub element_class: Option<ElementClass>,
}

/// Load benchmark cases from JSONL; case ids must be unique.
pub fn read_benchmark(path: &Path) -> Result<Vec<BenchmarkCase>> {
    let cases: Vec<BenchmarkCase> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for c in &cases {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Data(format!(
                "{}: duplicate benchmark case id {}",
                path.display(),
                c.id
            )));
        }
    }
    Ok(cases)
}

/// Fingerprint of the benchmark identity: case ids, boxes and grouping.
/// Order-independent so reports from reshuffled inputs still compare.
pub fn benchmark_digest(cases: &[BenchmarkCase]) -> String {
    let mut lines: Vec<String> = cases
        .iter()
        .map(|c| {
            format!(
                "{}|{}|{:.6},{:.6},{:.6},{:.6}",
                c.id,
                c.group.as_str(),
                c.gt_box.x1,
                c.gt_box.y1,
                c.gt_box.x2,
                c.gt_box.y2
            )
        })
        .collect();
    lines.sort_unstable();
    let mut h = Sha256::new();
    for line in &lines {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Per element class (`text` / `icon`); cases without a class only count
    /// toward the group totals.
    pub cells: BTreeMap<String, CellStats>,
    /// Ids of failed cases, sorted.
    pub failure_ids: Vec<String>,
}

/// Smallest significant differences, reported both at the observed accuracy
/// and at worst-case p = 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub two_sigma_at_observed: f64,
    pub two_sigma_at_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark_digest: String,
    pub n_cases: usize,
    /// Unweighted mean of group accuracies.
    pub overall_accuracy: f64,
    pub significance: Significance,
    pub groups: BTreeMap<String, GroupReport>,
}

impl EvalReport {
    pub fn total_failures(&self) -> usize {
        self.groups.values().map(|g| g.failure_ids.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreOptions {
    /// Count a case with no prediction as a failure instead of erroring.
    pub missing_as_fail: bool,
}

/// Score predictions against benchmark cases.
///
/// Every case needs exactly one prediction; missing ids are an error unless
/// `missing_as_fail` is set. Predictions for unknown ids are ignored, so one
/// replay file can cover several benchmarks.
pub fn score(
    cases: &[BenchmarkCase],
    predictions: &[PredictionRecord],
    opts: ScoreOptions,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::Data("benchmark has no cases".into()));
    }
    let mut case_ids = HashSet::with_capacity(cases.len());
    for c in cases {
        if !case_ids.insert(c.id.as_str()) {
            return Err(Error::Data(format!("duplicate benchmark case id {}", c.id)));
        }
    }
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        p.validate()?;
        if by_id.insert(p.sample_id.as_str(), p).is_some() {
            return Err(Error::DuplicatePrediction(p.sample_id.clone()));
        }
    }
    let missing: Vec<String> = cases
        .iter()
        .filter(|c| !by_id.contains_key(c.id.as_str()))
        .map(|c| c.id.clone())
        .collect();
    if !missing.is_empty() && !opts.missing_as_fail {
        let mut sorted = missing;
        sorted.sort_unstable();
        return Err(Error::MissingPredictions(sorted));
    }

    // outcome computation parallelizes; aggregation is a deterministic
    // sequential reduction over the case order
    let outcomes: Vec<bool> = cases
        .par_iter()
        .map(|case| {
            by_id
                .get(case.id.as_str())
                .map(|p| point_in_box(p.click_point(), &case.gt_box))
                .unwrap_or(false)
        })
        .collect();

    struct Tally {
        n: usize,
        correct: usize,
        cells: BTreeMap<String, (usize, usize)>,
        failures: Vec<String>,
    }
    let mut tallies: BTreeMap<&'static str, Tally> = BTreeMap::new();
    for (case, outcome) in cases.iter().zip(outcomes) {
        let tally = tallies.entry(case.group.as_str()).or_insert(Tally {
            n: 0,
            correct: 0,
            cells: BTreeMap::new(),
            failures: Vec::new(),
        });
        tally.n += 1;
        tally.correct += usize::from(outcome);
        if let Some(class) = case.element_class {
            let cell = tally.cells.entry(class.as_str().to_owned()).or_insert((0, 0));
            cell.0 += 1;
            cell.1 += usize::from(outcome);
        }
        if !outcome {
            tally.failures.push(case.id.clone());
        }
    }

    let mut groups = BTreeMap::new();
    let mut acc_sum = 0.0;
    for (name, tally) in &mut tallies {
        tally.failures.sort_unstable();
        let accuracy = tally.correct as f64 / tally.n as f64;
        acc_sum += accuracy;
        groups.insert(
            (*name).to_owned(),
            GroupReport {
                n: tally.n,
                correct: tally.correct,
                accuracy,
                cells: tally
                    .cells
                    .iter()
                    .map(|(k, (n, correct))| {
                        (
                            k.clone(),
                            CellStats {
                                n: *n,
                                correct: *correct,
                                accuracy: *correct as f64 / *n as f64,
                            },
                        )
                    })
                    .collect(),
                failure_ids: std::mem::take(&mut tally.failures),
            },
        );
    }
    let overall_accuracy = acc_sum / groups.len() as f64;
    let n_cases = cases.len();
    Ok(EvalReport {
        benchmark_digest: benchmark_digest(cases),
        n_cases,
        overall_accuracy,
        significance: Significance {
            two_sigma_at_observed: significance_threshold(n_cases as u64, overall_accuracy)?,
            two_sigma_at_half: significance_threshold(n_cases as u64, 0.5)?,
        },
        groups,
    })
}

/// Smallest significant (2 sigma) accuracy difference for a benchmark of `n`
/// cases at accuracy `p`, from a Beta(1,1) conjugate prior: with
/// k = round(p*n) successes the posterior mean is m = (k+1)/(n+2), the
/// posterior variance m(1-m)/(n+3), and the threshold 2*sqrt(variance).
pub fn significance_threshold(n: u64, p: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Data("significance threshold needs n >= 1".into()));
    }
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange {
            what: "accuracy",
            value: p,
        });
    }
    let k = (p * n as f64).round();
    let n = n as f64;
    let mean = (k + 1.0) / (n + 2.0);
    let variance = mean * (1.0 - mean) / (n + 3.0);
    Ok(2.0 * variance.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Significant,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub group: String,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub difference: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Compare two runs over the same benchmark, group by group plus an overall
/// row. The threshold uses the group's case count with p pooled as the mean
/// of the two accuracies.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<Vec<GroupComparison>> {
    if a.benchmark_digest != b.benchmark_digest {
        return Err(Error::Data(format!(
            "reports cover different benchmarks ({} vs {})",
            a.benchmark_digest, b.benchmark_digest
        )));
    }
    let mut out = Vec::new();
    for (name, ga) in &a.groups {
        let gb = b
            .groups
            .get(name)
            .ok_or_else(|| Error::Data(format!("group {name} missing from second report")))?;
        out.push(comparison_row(name, ga.n as u64, ga.accuracy, gb.accuracy)?);
    }
    out.push(comparison_row(
        "overall",
        a.n_cases as u64,
        a.overall_accuracy,
        b.overall_accuracy,
    )?);
    Ok(out)
}

fn comparison_row(name: &str, n: u64, acc_a: f64, acc_b: f64) -> Result<GroupComparison> {
    let pooled = ((acc_a + acc_b) / 2.0).clamp(0.0, 1.0);
    let threshold = significance_threshold(n, pooled)?;
    let difference = acc_a - acc_b;
    Ok(GroupComparison {
        group: name.to_owned(),
        accuracy_a: acc_a,
        accuracy_b: acc_b,
        difference,
        threshold,
        verdict: if difference.abs() > threshold {
            Verdict::Significant
        } else {
            Verdict::Inconclusive
        },
    })
}

/// Render a report as a group-by-class accuracy grid.
pub fn render_eval_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "benchmark {}  cases {}", report.benchmark_digest, report.n_cases);
    let _ = writeln!(s, "{:<10} {:>6} {:>9} {:>9} {:>9}", "group", "n", "acc%", "text%", "icon%");
    for (name, g) in &report.groups {
        let cell = |key: &str| {
            g.cells
                .get(key)
                .map(|c| format!("{:.1}", c.accuracy * 100.0))
                .unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>9.1} {:>9} {:>9}",
            name,
            g.n,
            g.accuracy * 100.0,
            cell("text"),
            cell("icon"),
        );
    }
    let _ = writeln!(
        s,
        "overall (group mean): {:.1}%",
        report.overall_accuracy * 100.0
    );
    let _ = writeln!(
        s,
        "smallest significant (2 sigma) difference: {:.2} pp at observed accuracy, {:.2} pp at p=0.5",
        report.significance.two_sigma_at_observed * 100.0,
        report.significance.two_sigma_at_half * 100.0
    );
    s
}
