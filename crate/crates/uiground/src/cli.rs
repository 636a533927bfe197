//! Command-line entry point wiring the pipeline modules into reproducible
//! runs. Every command that writes an output also writes a machine-readable
//! run record (`<out>.run.json`) with the argv, seed, version and counts.
//!
//! Exit codes: 0 success, 1 data errors, 2 usage errors.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::{self, AnnotationField, AugmentJob, PromptPack};
use crate::backend::{predict_all, Backend};
use crate::error::{Error, Result};
use crate::eval::{read_benchmark, render_eval_text, score, EvalReport, ScoreOptions};
use crate::failure::{analyze, render_failure_text, AnalyzeOptions, FailureBreakdown};
use crate::ingest::{build_mixture, BenchmarkIndex, MixtureManifest};
use crate::model::{
    read_predictions, read_samples, sample_id, write_jsonl, write_samples, Direction, Sample,
    TaskKind,
};
use crate::sampling::SamplingMode;
use crate::taskgen::{direction_split, render_sample, GenOptions, TemplatePack};

#[derive(Parser)]
#[command(name = "uiground", version, about = "UI grounding data pipeline and eval harness")]
struct Cli {
    /// Worker threads for internal parallelism (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert manifest sources into unified sample JSONL (no subsampling).
    Ingest(IngestArgs),
    /// Convert, contamination-filter and fraction-sample manifest sources.
    Mixture(MixtureArgs),
    /// Render multitask prompts/targets from raw samples via templates.
    #[command(name = "gen-tasks")]
    GenTasks(GenTasksArgs),
    /// Annotate samples with an MLLM endpoint (purpose/caption/expectation).
    Augment(AugmentArgs),
    /// Score predictions against a benchmark.
    Eval(EvalArgs),
    /// Categorize failures: near misses and positional bias.
    Analyze(AnalyzeArgs),
    /// Smallest significant (2 sigma) accuracy difference for n cases at p.
    Significance(SignificanceArgs),
    /// Render eval + failure reports as one human-readable summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Benchmark JSONL for the contamination filter (repeatable).
    #[arg(long)]
    contamination: Vec<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct MixtureArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Sampled rows; omit for a counts-only (accounting) run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Realized manifest path (default: <manifest>.realized.toml).
    #[arg(long)]
    realized: Option<PathBuf>,
    #[arg(long)]
    contamination: Vec<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenTasksArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Template pack TOML (default: bundled pack).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Annotation fraction for dual-capable samples; omit to keep directions.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling mode for the direction split.
    #[arg(long, value_parser = parse_mode, default_value = "count-exact")]
    mode: SamplingMode,
    /// Emit 2-token center points as agent-action targets.
    #[arg(long)]
    point_targets: bool,
    /// Materialize meta annotation fields (from `augment`) as extra samples.
    #[arg(long)]
    expand_annotations: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AugmentArgs {
    /// Job description TOML (input, endpoint, fields, cache, limits).
    #[arg(long)]
    manifest: PathBuf,
    /// Annotation results JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Also write input samples with ok annotations merged into meta.
    #[arg(long)]
    merged: Option<PathBuf>,
    /// Override the job's fields (comma-separated).
    #[arg(long)]
    fields: Option<String>,
    /// Override the job's endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Override the job's model name.
    #[arg(long)]
    model: Option<String>,
    /// Instruction pack TOML (default: bundled instructions).
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    benchmark: PathBuf,
    /// Prediction JSONL to score.
    #[arg(long, conflicts_with = "backend")]
    pred: Option<PathBuf>,
    /// Generate predictions first: replay:<path>, remote:<url>, center,
    /// random:<seed>.
    #[arg(long)]
    backend: Option<String>,
    /// Write the generated predictions (only with --backend).
    #[arg(long)]
    pred_out: Option<PathBuf>,
    /// Report JSON path (text report always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Count cases without a prediction as failures instead of erroring.
    #[arg(long)]
    missing_as_fail: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Near-miss margin in normalized units.
    #[arg(long, default_value_t = crate::failure::DEFAULT_MARGIN)]
    margin: f64,
    /// Histogram grid size Q (QxQ cells).
    #[arg(long, default_value_t = crate::failure::DEFAULT_GRID)]
    grid: usize,
    /// Bias flag threshold on the mean point.
    #[arg(long, default_value_t = crate::failure::DEFAULT_BIAS_TAU)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    missing_as_fail: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SignificanceArgs {
    /// Benchmark case count.
    #[arg(long)]
    n: u64,
    /// Observed accuracy in [0,1].
    #[arg(long)]
    p: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Eval report JSON (from `eval --out`).
    #[arg(long)]
    eval: PathBuf,
    /// Failure breakdown JSON (from `analyze --out`).
    #[arg(long)]
    analysis: Option<PathBuf>,
    /// Summary text path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram heatmap SVG (needs --analysis).
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

fn parse_mode(s: &str) -> std::result::Result<SamplingMode, String> {
    match s {
        "count-exact" => Ok(SamplingMode::CountExact),
        "hash" | "hash-based" => Ok(SamplingMode::HashBased),
        other => Err(format!("unknown mode {other:?}, expected count-exact or hash")),
    }
}

/// Parse and execute; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(argv.iter().cloned()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if cli.jobs > 0 {
        // ignore failure: the global pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    let argv_strings: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli.command, &argv_strings) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: &'a [String],
    seed: Option<u64>,
    counts: BTreeMap<String, serde_json::Value>,
}

impl<'a> RunRecord<'a> {
    fn new(command: &'static str, argv: &'a [String], seed: Option<u64>) -> Self {
        Self {
            tool: "uiground",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv,
            seed,
            counts: BTreeMap::new(),
        }
    }

    fn count(&mut self, key: &str, value: impl Serialize) {
        self.counts.insert(
            key.to_owned(),
            serde_json::to_value(value).expect("count values serialize"),
        );
    }

    fn write_next_to(&self, out: &Path) -> Result<()> {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        let path = out.with_file_name(name);
        let body = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn load_contamination_index(paths: &[PathBuf]) -> Result<Option<BenchmarkIndex>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let mut cases = Vec::new();
    for path in paths {
        cases.extend(read_benchmark(path)?);
    }
    Ok(Some(BenchmarkIndex::build(&cases)))
}

fn execute(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Ingest(args) => cmd_ingest(args, argv),
        Command::Mixture(args) => cmd_mixture(args, argv),
        Command::GenTasks(args) => cmd_gen_tasks(args, argv),
        Command::Augment(args) => cmd_augment(args, argv),
        Command::Eval(args) => cmd_eval(args, argv),
        Command::Analyze(args) => cmd_analyze(args, argv),
        Command::Significance(args) => cmd_significance(args),
        Command::Report(args) => cmd_report(args, argv),
    }
}

fn cmd_ingest(args: IngestArgs, argv: &[String]) -> Result<()> {
    ensure_writable(&args.out, args.force)?;
    let mut manifest = MixtureManifest::from_path(&args.manifest)?;
    // ingest converts everything; fractions belong to `mixture`
    for source in &mut manifest.sources {
        source.fraction = 1.0;
        if source.path.is_none() {
            return Err(Error::Config(format!(
                "source {} has no path; ingest needs materializable sources",
                source.name
            )));
        }
    }
    let index = load_contamination_index(&args.contamination)?;
    let (samples, realized, stats) = build_mixture(&manifest, index.as_ref())?;
    write_samples(&args.out, &samples)?;

    let mut record = RunRecord::new("ingest", argv, Some(manifest.seed));
    record.count("samples_out", samples.len());
    record.count("sources", realized.sources.len());
    for (name, s) in &stats {
        record.count(&format!("source.{name}.rows_read"), s.rows_read);
        record.count(&format!("source.{name}.samples"), s.samples_emitted);
        if !s.skips.is_empty() {
            record.count(&format!("source.{name}.skips"), &s.skips);
        }
    }
    for r in &realized.sources {
        if r.rows_dropped_contamination > 0 {
            record.count(
                &format!("source.{}.dropped_contamination", r.name),
                r.rows_dropped_contamination,
            );
        }
    }
    record.write_next_to(&args.out)?;
    eprintln!("ingest: wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn cmd_mixture(args: MixtureArgs, argv: &[String]) -> Result<()> {
    let realized_path = args.realized.clone().unwrap_or_else(|| {
        let mut name = args
            .manifest
            .file_stem()
            .unwrap_or_default()
            .to_os_string();
        name.push(".realized.toml");
        args.manifest.with_file_name(name)
    });
    ensure_writable(&realized_path, args.force)?;
    if let Some(out) = &args.out {
        ensure_writable(out, args.force)?;
    }
    let manifest = MixtureManifest::from_path(&args.manifest)?;
    let index = load_contamination_index(&args.contamination)?;
    let (samples, realized, _) = build_mixture(&manifest, index.as_ref())?;
    if let Some(out) = &args.out {
        write_samples(out, &samples)?;
    }
    std::fs::write(&realized_path, realized.to_toml()?)
        .map_err(|e| Error::io(&realized_path, e))?;

    let mut record = RunRecord::new("mixture", argv, Some(manifest.seed));
    record.count("total_rows", realized.total_rows);
    record.count("materialized_rows", samples.len());
    for r in &realized.sources {
        record.count(&format!("source.{}.rows_kept", r.name), r.rows_kept);
    }
    record.write_next_to(&realized_path)?;
    println!("total_rows {}", realized.total_rows);
    eprintln!(
        "mixture: realized manifest at {} (total {} rows{})",
        realized_path.display(),
        realized.total_rows,
        args.out
            .as_deref()
            .map(|o| format!(", {} rows written to {}", samples.len(), o.display()))
            .unwrap_or_default()
    );
    Ok(())
}

/// Materialize augmented meta fields as additional raw annotation samples.
fn expand_annotations(samples: &[Sample]) -> Vec<Sample> {
    let mut seen: HashSet<String> = samples.iter().map(|s| s.id.clone()).collect();
    let mut extra = Vec::new();
    for sample in samples {
        for (field, kind) in [
            ("caption", TaskKind::ElementCaption),
            ("purpose", TaskKind::ElementPurpose),
            ("expectation", TaskKind::ElementExpectation),
        ] {
            if sample.task == kind {
                continue; // the sample already is that annotation
            }
            let Some(text) = sample.meta.get(field).filter(|t| !t.trim().is_empty()) else {
                continue;
            };
            if sample.target_boxes.is_empty() {
                continue;
            }
            let row = sample
                .meta
                .get("row")
                .cloned()
                .unwrap_or_else(|| sample.id.clone());
            let id = sample_id(&sample.source, &format!("{row}:{kind}:annotation"));
            if !seen.insert(id.clone()) {
                continue; // source row already provided this annotation
            }
            let mut meta = BTreeMap::new();
            meta.insert("text".to_owned(), text.clone());
            meta.insert("row".to_owned(), row);
            extra.push(Sample {
                id,
                source: sample.source.clone(),
                image_ref: sample.image_ref.clone(),
                image_w: sample.image_w,
                image_h: sample.image_h,
                task: kind,
                direction: Direction::Annotation,
                prompt: String::new(),
                target_text: Some(text.clone()),
                target_boxes: sample.target_boxes.clone(),
                target_point: None,
                meta,
            });
        }
    }
    extra
}

fn cmd_gen_tasks(args: GenTasksArgs, argv: &[String]) -> Result<()> {
    ensure_writable(&args.out, args.force)?;
    let pack = match &args.templates {
        Some(path) => TemplatePack::from_path(path)?,
        None => TemplatePack::default(),
    };
    let opts = GenOptions {
        point_targets: args.point_targets,
        ..Default::default()
    };
    let mut samples = read_samples(&args.input)?;
    let n_in = samples.len();

    let mut expanded = 0usize;
    if args.expand_annotations {
        let extra = expand_annotations(&samples);
        expanded = extra.len();
        samples.extend(extra);
    }

    if let Some(ratio) = args.ratio {
        let order: BTreeMap<String, usize> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        let split = direction_split(samples, ratio, args.seed, args.mode)?;
        let mut merged: Vec<Sample> = split
            .annotation
            .into_iter()
            .chain(split.grounding)
            .chain(split.neutral)
            .collect();
        merged.sort_by_key(|s| order[&s.id]);
        samples = merged;
    }

    let mut rendered = Vec::with_capacity(samples.len());
    let mut skipped_no_template = 0usize;
    for sample in &samples {
        match render_sample(sample, &pack, &opts)? {
            Some(s) => rendered.push(s),
            None => skipped_no_template += 1,
        }
    }
    write_samples(&args.out, &rendered)?;

    let mut record = RunRecord::new("gen-tasks", argv, Some(args.seed));
    record.count("samples_in", n_in);
    record.count("expanded_annotations", expanded);
    record.count("samples_out", rendered.len());
    record.count("skipped_no_template", skipped_no_template);
    if let Some(ratio) = args.ratio {
        record.count("annotation_ratio", ratio);
    }
    record.write_next_to(&args.out)?;
    eprintln!(
        "gen-tasks: rendered {} samples to {} ({} expanded, {} without template)",
        rendered.len(),
        args.out.display(),
        expanded,
        skipped_no_template
    );
    Ok(())
}

fn cmd_augment(args: AugmentArgs, argv: &[String]) -> Result<()> {
    ensure_writable(&args.out, args.force)?;
    if let Some(merged) = &args.merged {
        ensure_writable(merged, args.force)?;
    }
    let mut job = AugmentJob::from_path(&args.manifest)?;
    if let Some(fields) = &args.fields {
        job.fields = fields
            .split(',')
            .map(AnnotationField::from_str)
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(endpoint) = &args.endpoint {
        job.endpoint = endpoint.clone();
    }
    if let Some(model) = &args.model {
        job.model_name = model.clone();
    }
    let prompts = match &args.prompts {
        Some(path) => PromptPack::from_path(path)?,
        None => PromptPack::default(),
    };
    let samples = read_samples(&job.input)?;
    let (results, stats) = augment::annotate(&job, &samples, &prompts)?;
    write_jsonl(&args.out, &results)?;
    let mut record = RunRecord::new("augment", argv, None);
    record.count("samples_in", samples.len());
    record.count("requested", stats.requested);
    record.count("cache_hits", stats.cache_hits);
    record.count("ok", stats.ok);
    record.count("rejected", stats.rejected);
    record.count("errors", stats.errors);
    record.count("http_requests", stats.http_requests);
    if let Some(merged_path) = &args.merged {
        let (merged, merge_report) = augment::merge_annotations(samples, &results);
        write_samples(merged_path, &merged)?;
        record.count("merged_attached", merge_report.attached);
        record.count("merged_duplicates", merge_report.duplicates);
    }
    record.write_next_to(&args.out)?;
    eprintln!(
        "augment: {} requested, {} cached, {} ok, {} rejected, {} errors",
        stats.requested, stats.cache_hits, stats.ok, stats.rejected, stats.errors
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs, argv: &[String]) -> Result<()> {
    if let Some(out) = &args.out {
        ensure_writable(out, args.force)?;
    }
    let cases = read_benchmark(&args.benchmark)?;
    let predictions = match (&args.pred, &args.backend) {
        (Some(pred), None) => read_predictions(pred)?,
        (None, Some(descriptor)) => {
            let backend = Backend::from_descriptor(descriptor)?;
            let (predictions, errors) = predict_all(&backend, &cases);
            if !errors.is_empty() && !args.missing_as_fail {
                let detail: Vec<String> = errors
                    .iter()
                    .take(5)
                    .map(|(id, e)| format!("{id}: {e}"))
                    .collect();
                return Err(Error::Data(format!(
                    "{} case(s) failed to predict (rerun with --missing-as-fail to score them as misses): {}",
                    errors.len(),
                    detail.join("; ")
                )));
            }
            if let Some(pred_out) = &args.pred_out {
                ensure_writable(pred_out, args.force)?;
                write_jsonl(pred_out, &predictions)?;
            }
            predictions
        }
        _ => {
            return Err(Error::Config(
                "eval needs exactly one of --pred or --backend".into(),
            ))
        }
    };
    let report = score(
        &cases,
        &predictions,
        ScoreOptions {
            missing_as_fail: args.missing_as_fail,
        },
    )?;
    print!("{}", render_eval_text(&report));
    if let Some(out) = &args.out {
        let body = serde_json::to_string_pretty(&report)? + "\n";
        std::fs::write(out, body).map_err(|e| Error::io(out, e))?;
        let mut record = RunRecord::new("eval", argv, None);
        record.count("n_cases", report.n_cases);
        record.count("overall_accuracy", report.overall_accuracy);
        record.count("failures", report.total_failures());
        record.write_next_to(out)?;
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs, argv: &[String]) -> Result<()> {
    if let Some(out) = &args.out {
        ensure_writable(out, args.force)?;
    }
    let cases = read_benchmark(&args.benchmark)?;
    let predictions = read_predictions(&args.pred)?;
    let breakdown = analyze(
        &cases,
        &predictions,
        AnalyzeOptions {
            margin: args.margin,
            grid: args.grid,
            bias_tau: args.tau,
            missing_as_fail: args.missing_as_fail,
        },
    )?;
    print!("{}", render_failure_text(&breakdown));
    if let Some(out) = &args.out {
        let body = serde_json::to_string_pretty(&breakdown)? + "\n";
        std::fs::write(out, body).map_err(|e| Error::io(out, e))?;
        let mut record = RunRecord::new("analyze", argv, None);
        record.count("n_cases", breakdown.n_cases);
        record.count("total_failures", breakdown.total_failures);
        record.count("missed_count", breakdown.missed_count);
        record.write_next_to(out)?;
    }
    Ok(())
}

fn cmd_significance(args: SignificanceArgs) -> Result<()> {
    let at_p = crate::eval::significance_threshold(args.n, args.p)?;
    let at_half = crate::eval::significance_threshold(args.n, 0.5)?;
    let payload = serde_json::json!({
        "n": args.n,
        "p": args.p,
        "two_sigma_at_p": at_p,
        "two_sigma_at_half": at_half,
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    Ok(())
}

fn cmd_report(args: ReportArgs, argv: &[String]) -> Result<()> {
    if let Some(out) = &args.out {
        ensure_writable(out, args.force)?;
    }
    let eval_text = std::fs::read_to_string(&args.eval).map_err(|e| Error::io(&args.eval, e))?;
    let report: EvalReport = serde_json::from_str(&eval_text)?;
    let mut summary = render_eval_text(&report);
    let mut breakdown: Option<FailureBreakdown> = None;
    if let Some(path) = &args.analysis {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: FailureBreakdown = serde_json::from_str(&text)?;
        summary.push('\n');
        summary.push_str(&render_failure_text(&b));
        breakdown = Some(b);
    }
    if let Some(plot) = &args.plot {
        ensure_writable(plot, args.force)?;
        let bias = breakdown
            .as_ref()
            .and_then(|b| b.bias.as_ref())
            .ok_or_else(|| {
                Error::Config("--plot needs --analysis with at least one failure".into())
            })?;
        std::fs::write(plot, histogram_svg(&bias.histogram)).map_err(|e| Error::io(plot, e))?;
    }
    match &args.out {
        Some(out) => {
            std::fs::write(out, &summary).map_err(|e| Error::io(out, e))?;
            let mut record = RunRecord::new("report", argv, None);
            record.count("groups", report.groups.len());
            record.write_next_to(out)?;
        }
        None => print!("{summary}"),
    }
    Ok(())
}

/// Static heatmap of the failed-click grid.
fn histogram_svg(h: &crate::failure::SpatialHistogram) -> String {
    const CELL: usize = 48;
    let size = h.q * CELL;
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1);
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    for row in 0..h.q {
        for col in 0..h.q {
            let count = h.at(col, row);
            let alpha = count as f64 / max as f64;
            let _ = write!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#c0392b" fill-opacity="{alpha:.3}" stroke="#333" stroke-width="1"/>"##,
                x = col * CELL,
                y = row * CELL,
            );
            let _ = write!(
                svg,
                r#"<text x="{x}" y="{y}" font-size="12" font-family="monospace" text-anchor="middle">{count}</text>"#,
                x = col * CELL + CELL / 2,
                y = row * CELL + CELL / 2 + 4,
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
