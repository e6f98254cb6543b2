//! The `xeval` command line: explain, evaluate, oracle, report, serve-check.
//!
//! Every flag can also be set in a key=value config file (TOML syntax), given
//! by `--config` or the `XEVAL_CONFIG` environment variable. Top-level keys
//! apply to every subcommand that has the flag; a `[evaluate]`-style section
//! applies to one subcommand. Flags on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus;
use crate::dataset::{load_dataset, sample_subset, DatasetManifest, DatasetTask, LoadedDataset};
use crate::eval::{canonical_json, CiMethod, EvalConfig, EvalError, Experiment, RunMeta, RunReport};
use crate::lime::{explain, LimeConfig, LimeError};
use crate::metrics::{aggregated_comprehensiveness, select_top_tokens, BinSet};
use crate::model::{
    predict_one, serve_check, BackendError, ClassifierBackend, ConstantClassifier, PredictionDist, RemoteBackend,
    RemoteConfig, TaskKind, ZeroShotClassifier, DEFAULT_TEMPLATE, NLI_CLASSES,
};
use crate::oracle::{self_check, ORACLE_TOLERANCE};
use crate::report::{self, render_token_heat_ansi, render_token_heat_html, SummaryRow, TokenHeat};
use crate::text::tokenize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, dataset or output path.
    Usage(String),
    /// The backend failed or was unreachable.
    Backend(String),
    /// A check ran and did not pass.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Check(_) => EXIT_CHECK_FAILED,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Backend(m) | CliError::Check(m) => m,
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::TemplateInvalid(_) | BackendError::InvalidRequest(_) | BackendError::ArityMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<LimeError> for CliError {
    fn from(e: LimeError) -> Self {
        match e {
            LimeError::Backend(b) => b.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "xeval",
    version,
    about = "Local surrogate explanations for text classifiers, with faithfulness and plausibility metrics",
    args_override_self = true
)]
pub struct Cli {
    /// Key=value config file; command-line flags override it
    #[arg(long, global = true, env = "XEVAL_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Explain one prediction and render a token heat map
    Explain(ExplainArgs),
    /// Run accuracy and explanation metrics over a dataset
    Evaluate(EvaluateArgs),
    /// Cross-check the surrogate and metrics against brute-force references
    Oracle(OracleArgs),
    /// Render or merge report.json files
    #[command(subcommand)]
    Report(ReportCommand),
    /// Probe a remote prediction server for protocol conformance
    ServeCheck(ServeCheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    /// synthetic:keywords, synthetic:demo or synthetic:constant (optionally with @SCALE), or an http(s) endpoint
    #[arg(long)]
    pub backend: String,
    /// Request timeout in seconds for remote backends
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    /// Largest batch sent to a remote backend in one request
    #[arg(long, default_value_t = 256)]
    pub max_batch: usize,
    /// Retries for transient remote failures
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
}

#[derive(Args, Debug, Clone)]
pub struct LimeArgs {
    /// Perturbed samples per explanation
    #[arg(long, default_value_t = 1000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 25.0)]
    pub kernel_width: f64,
    #[arg(long, default_value_t = 100.0)]
    pub distance_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ridge_lambda: f64,
    /// Enumerate all masks for inputs shorter than this
    #[arg(long, default_value_t = 12)]
    pub exhaustive_below: usize,
    /// Items per backend call
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

impl LimeArgs {
    fn config(&self, seed: u64) -> LimeConfig {
        LimeConfig {
            n_samples: self.n_samples,
            kernel_width: self.kernel_width,
            distance_scale: self.distance_scale,
            ridge_lambda: self.ridge_lambda,
            seed,
            enumerate_exhaustive_below: self.exhaustive_below,
            batch_size: self.batch_size,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskArg {
    Nli,
    Zsc,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub lime: LimeArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TaskArg::Nli)]
    pub task: TaskArg,
    #[arg(long)]
    pub premise: Option<String>,
    #[arg(long)]
    pub hypothesis: Option<String>,
    #[arg(long)]
    pub question: Option<String>,
    /// Comma-separated candidate answers
    #[arg(long)]
    pub candidates: Option<String>,
    /// Hypothesis template for zero-shot classification
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    pub template: String,
    /// JSONL dataset path, or bundled:mini_esnli / bundled:mini_cose (a missing mini_esnli.jsonl or mini_cose.jsonl also means the bundled copy)
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Instance id within --dataset
    #[arg(long)]
    pub id: Option<String>,
    /// Class to explain (default: the predicted class)
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub no_color: bool,
    #[arg(long, default_value = "xeval-out/explain")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub lime: LimeArgs,
    /// JSONL dataset path, or bundled:mini_esnli / bundled:mini_cose (a missing mini_esnli.jsonl or mini_cose.jsonl also means the bundled copy)
    #[arg(long)]
    pub dataset: String,
    /// Manifest JSON (default: <dataset stem>.manifest.json next to the dataset)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Explain a seeded subset of this size (accuracy always uses every instance)
    #[arg(long)]
    pub sample_n: Option<usize>,
    #[arg(long)]
    pub stratify: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated comprehensiveness bins
    #[arg(long, default_value = "0.1,0.3,0.5")]
    pub bins: BinSet,
    /// Rationale length ratio for IOU (default: the manifest's ratio when highlights exist)
    #[arg(long)]
    pub plausibility_ratio: Option<f64>,
    /// Skip IOU even when highlights exist
    #[arg(long)]
    pub no_iou: bool,
    /// Worker threads (default: logical cores)
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Confidence interval method: normal or wilson
    #[arg(long, default_value = "normal")]
    pub ci: CiMethod,
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    pub template: String,
    #[arg(long, default_value = "xeval-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb the surrogate by this much to confirm the checks can fail
    #[arg(long, default_value_t = 0.0)]
    pub inject_error: f64,
    /// Also write the results as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ReportCommand {
    /// Render tables and figures from one or more report.json files
    Render(ReportArgs),
    /// Combine reports (one per backend) into one set of tables and figures
    Merge(ReportArgs),
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "xeval-out")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireTask {
    NliPair,
    SingleText,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct ServeCheckArgs {
    #[arg(long)]
    pub endpoint: String,
    #[arg(long, value_enum, default_value_t = WireTask::NliPair)]
    pub task: WireTask,
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
}

/// Backend wrapper reporting the `--backend` string as its name.
struct Named {
    inner: Box<dyn ClassifierBackend>,
    name: String,
}

impl ClassifierBackend for Named {
    fn task(&self) -> TaskKind {
        self.inner.task()
    }
    fn class_names(&self) -> Option<Vec<String>> {
        self.inner.class_names()
    }
    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        self.inner.predict_batch(inputs)
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Builds a backend from a `--backend` value such as `synthetic:keywords@0.5` or `http://localhost:8000`.
pub fn backend_from_spec(args: &BackendArgs) -> Result<Box<dyn ClassifierBackend>, CliError> {
    let spec = args.backend.trim();
    let inner: Box<dyn ClassifierBackend> = if spec.starts_with("http://") || spec.starts_with("https://") {
        if !(args.timeout > 0.0 && args.timeout.is_finite()) {
            return Err(usage("--timeout must be positive"));
        }
        let mut cfg = RemoteConfig::new(spec);
        cfg.timeout = Duration::from_secs_f64(args.timeout);
        cfg.max_batch = args.max_batch;
        cfg.retries = args.retries;
        Box::new(RemoteBackend::new(cfg).map_err(usage)?)
    } else if let Some(rest) = spec.strip_prefix("synthetic:") {
        let (kind, scale) = match rest.split_once('@') {
            Some((k, s)) => {
                let scale: f64 = s.parse().map_err(|_| usage(format!("bad scale {s:?} in backend {spec:?}")))?;
                if !scale.is_finite() {
                    return Err(usage(format!("bad scale {s:?} in backend {spec:?}")));
                }
                (k, Some(scale))
            }
            None => (rest, None),
        };
        match kind {
            "keywords" => Box::new(corpus::keyword_classifier().scaled(scale.unwrap_or(1.0))),
            "demo" => Box::new(corpus::demo_classifier().scaled(scale.unwrap_or(1.0))),
            "constant" => {
                if scale.is_some() {
                    return Err(usage("synthetic:constant takes no scale"));
                }
                let k = NLI_CLASSES.len();
                let dist = PredictionDist::new(vec![1.0 / k as f64; k], NLI_CLASSES.iter().map(|s| s.to_string()).collect())
                    .map_err(usage)?;
                Box::new(ConstantClassifier::new(TaskKind::NliPair, dist))
            }
            other => {
                return Err(usage(format!(
                    "unknown synthetic backend {other:?} (keywords, demo or constant)"
                )))
            }
        }
    } else {
        return Err(usage(format!(
            "unknown backend {spec:?}; use synthetic:keywords, synthetic:demo, synthetic:constant or an http(s) URL"
        )));
    };
    Ok(Box::new(Named {
        inner,
        name: spec.to_string(),
    }))
}

/// Loads a dataset path (manifest defaults to `<stem>.manifest.json`) or a bundled corpus.
pub fn load_dataset_arg(dataset: &str, manifest: Option<&Path>) -> Result<LoadedDataset, CliError> {
    if let Some(name) = dataset.strip_prefix("bundled:") {
        return corpus::by_name(name).ok_or_else(|| usage(format!("no bundled corpus named {name:?}")));
    }
    let path = Path::new(dataset);
    if !path.exists() && manifest.is_none() {
        if let Some(bundled) = path.file_stem().and_then(|s| corpus::by_name(&s.to_string_lossy())) {
            return Ok(bundled);
        }
    }
    let manifest_path = match manifest {
        Some(m) => m.to_path_buf(),
        None => {
            let stem = path
                .file_stem()
                .ok_or_else(|| usage(format!("bad dataset path {dataset:?}")))?
                .to_string_lossy();
            path.with_file_name(format!("{stem}.manifest.json"))
        }
    };
    let manifest = DatasetManifest::load(&manifest_path).map_err(usage)?;
    load_dataset(path, &manifest).map_err(usage)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| usage(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()
}

#[derive(Serialize)]
struct ExplainOutput<'a> {
    backend: String,
    task: &'a str,
    id: Option<&'a str>,
    segments: &'a [String],
    candidates: &'a [String],
    tokens: Vec<String>,
    token_segments: Vec<usize>,
    scores: &'a [f64],
    target_class: usize,
    target_name: &'a str,
    probabilities: BTreeMap<String, f64>,
    intercept: f64,
    local_fidelity_r2: f64,
    n_evaluations: usize,
    comp_agg: f64,
    comp_per_bin: &'a [crate::metrics::BinScore],
    config: &'a LimeConfig,
}

fn cmd_explain(a: &ExplainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let backend = backend_from_spec(&a.backend)?;
    let (task, segments, candidates, id) = if let Some(ds) = &a.dataset {
        let id = a.id.as_deref().ok_or_else(|| usage("--dataset needs --id"))?;
        let loaded = load_dataset_arg(ds, a.manifest.as_deref())?;
        let inst = loaded
            .instances
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| usage(format!("no instance {id:?} in {ds}")))?;
        let task = match inst.task {
            DatasetTask::Nli => TaskArg::Nli,
            DatasetTask::Zsc => TaskArg::Zsc,
        };
        (task, inst.segments.clone(), inst.candidates.clone(), Some(id.to_string()))
    } else {
        match a.task {
            TaskArg::Nli => {
                let (Some(p), Some(h)) = (&a.premise, &a.hypothesis) else {
                    return Err(usage("nli explanations need --premise and --hypothesis (or --dataset and --id)"));
                };
                (TaskArg::Nli, vec![p.clone(), h.clone()], Vec::new(), None)
            }
            TaskArg::Zsc => {
                let (Some(q), Some(c)) = (&a.question, &a.candidates) else {
                    return Err(usage("zsc explanations need --question and --candidates"));
                };
                (TaskArg::Zsc, vec![q.clone()], split_list(c), None)
            }
        }
    };
    let input = tokenize(&segments).map_err(usage)?;
    let lime = a.lime.config(a.seed);
    lime.validate().map_err(usage)?;
    let bins = BinSet::default();

    let zsc;
    let clf: &dyn ClassifierBackend = match task {
        TaskArg::Nli => &*backend,
        TaskArg::Zsc => {
            zsc = ZeroShotClassifier::new(&*backend, candidates.clone(), a.template.clone())?;
            &zsc
        }
    };
    let full = predict_one(clf, input.raw_segments())?;
    let target = match &a.target {
        Some(name) => Some(
            full.class_index(name)
                .ok_or_else(|| usage(format!("unknown target class {name:?}; classes are {:?}", full.class_names())))?,
        ),
        None => None,
    };
    let expl = explain(&input, clf, target, &lime)?;
    let comp = aggregated_comprehensiveness(&input, clf, expl.target_class, &expl, &bins).map_err(|e| match e {
        crate::metrics::MetricError::Backend(b) => CliError::from(b),
        other => usage(other),
    })?;

    let (tokens, token_segments, _) = report::heat_parts(&input, &expl);
    let heat = TokenHeat {
        tokens: &tokens,
        segments: &token_segments,
        scores: &expl.scores,
    };
    let caption = format!(
        "{} | target {} (p = {:.3}) | {}",
        id.as_deref().unwrap_or("input"),
        expl.target_name,
        expl.full_probability,
        backend.name()
    );
    let output = ExplainOutput {
        backend: backend.name(),
        task: match task {
            TaskArg::Nli => "nli",
            TaskArg::Zsc => "zsc",
        },
        id: id.as_deref(),
        segments: &segments,
        candidates: &candidates,
        tokens: tokens.clone(),
        token_segments: token_segments.clone(),
        scores: &expl.scores,
        target_class: expl.target_class,
        target_name: &expl.target_name,
        probabilities: full
            .class_names()
            .iter()
            .cloned()
            .zip(full.probs().iter().copied())
            .collect(),
        intercept: expl.intercept,
        local_fidelity_r2: expl.local_fidelity_r2,
        n_evaluations: expl.n_evaluations,
        comp_agg: comp.comp_agg,
        comp_per_bin: &comp.comp_per_bin,
        config: &lime,
    };
    write_file(&a.out.join("scores.json"), &canonical_json(&output))?;
    write_file(&a.out.join("heat.html"), &render_token_heat_html(&heat, &caption))?;

    let io = |e: std::io::Error| usage(e);
    writeln!(out, "{caption}").map_err(io)?;
    if a.no_color {
        let plain: Vec<String> = tokens
            .iter()
            .zip(&expl.scores)
            .map(|(t, s)| format!("{t}[{s:+.3}]"))
            .collect();
        writeln!(out, "{}", plain.join(" ")).map_err(io)?;
    } else {
        write!(out, "{}", render_token_heat_ansi(&heat)).map_err(io)?;
    }
    let top = select_top_tokens(&expl, a.top.min(expl.n_tokens())).map_err(usage)?;
    for (rank, i) in top.iter().enumerate() {
        writeln!(out, "{:>3}. {:<16} {:+.4}", rank + 1, tokens[*i], expl.scores[*i]).map_err(io)?;
    }
    writeln!(
        out,
        "comprehensiveness {:.3} (bins {bins}); fidelity r2 {:.3}; wrote {}",
        comp.comp_agg,
        expl.local_fidelity_r2,
        a.out.display()
    )
    .map_err(io)?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let started = Instant::now();
    let backend = backend_from_spec(&a.backend)?;
    let loaded = load_dataset_arg(&a.dataset, a.manifest.as_deref())?;
    if !loaded.rejects.is_empty() {
        let _ = writeln!(err, "warning: {} dataset line(s) rejected", loaded.rejects.len());
        for r in loaded.rejects.iter().take(10) {
            let _ = writeln!(err, "  line {}: {}", r.line, r.reason);
        }
    }
    let pool = &loaded.instances;
    let n = a.sample_n.unwrap_or(pool.len());
    let subset = sample_subset(pool, n, a.seed, a.stratify).map_err(usage)?;

    let has_highlights = subset.instances.iter().any(|i| i.highlights.is_some());
    let plausibility_ratio = if a.no_iou {
        None
    } else {
        a.plausibility_ratio
            .or(has_highlights.then_some(loaded.manifest.dataset_mean_human_ratio))
    };
    let config = EvalConfig {
        lime: a.lime.config(a.seed),
        bins: a.bins.clone(),
        plausibility_ratio,
        ci_method: a.ci,
        template: a.template.clone(),
    };
    let parallelism = a
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if parallelism == 0 {
        return Err(usage("--parallelism must be at least 1"));
    }
    let labels = match loaded.manifest.task {
        DatasetTask::Nli => loaded.manifest.class_names.clone(),
        DatasetTask::Zsc => Vec::new(),
    };
    let experiment = Experiment {
        dataset: &loaded.manifest.name,
        annotator_policy: loaded.manifest.annotator_policy.clone(),
        labels,
        config,
        parallelism,
    };
    let report = experiment
        .run(pool, &subset.instances, &*backend)
        .map_err(|e| match e {
            EvalError::Backend(b) => CliError::from(b),
            EvalError::AllFailed(_) => CliError::Backend(e.to_string()),
            other => usage(other),
        })?;

    write_file(&a.out.join("report.json"), &report.to_canonical_json())?;
    let meta = RunMeta {
        elapsed_seconds: started.elapsed().as_secs_f64(),
        parallelism,
        instances_explained: report.records.len(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let meta_json = serde_json::to_string_pretty(&meta).map_err(usage)? + "\n";
    write_file(&a.out.join("run_meta.json"), &meta_json)?;
    let written = report::write_outputs(&a.out, std::slice::from_ref(&report)).map_err(usage)?;

    let io = |e: std::io::Error| usage(e);
    write!(out, "{}", report::summary_markdown(&[SummaryRow::from_report(&report)])).map_err(io)?;
    writeln!(
        out,
        "explained {} of {} instances; wrote {} files to {}",
        report.records.len(),
        pool.len(),
        written.len() + 2,
        a.out.display()
    )
    .map_err(io)?;
    if !report.failures.is_empty() {
        let _ = writeln!(err, "warning: {} instance(s) failed and were excluded", report.failures.len());
        for f in &report.failures {
            let _ = writeln!(err, "  {}: {}", f.id, f.error);
        }
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let results = self_check(a.trials, a.seed, a.inject_error);
    let io = |e: std::io::Error| usage(e);
    for r in &results {
        writeln!(
            out,
            "{} {:<28} trials={:<5} max_abs_error={:.3e} tolerance={:e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.quantity,
            r.trials,
            r.max_abs_error,
            ORACLE_TOLERANCE
        )
        .map_err(io)?;
    }
    if let Some(path) = &a.out {
        write_file(path, &(serde_json::to_string_pretty(&results).map_err(usage)? + "\n"))?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Check(format!("{failed} oracle check(s) exceeded tolerance")));
    }
    Ok(())
}

fn read_reports(paths: &[PathBuf]) -> Result<Vec<RunReport>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        let parsed: Result<Vec<RunReport>, _> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|r| vec![r])
        };
        all.extend(parsed.map_err(|e| usage(format!("{}: not a report: {e}", p.display())))?);
    }
    Ok(all)
}

fn cmd_report(cmd: &ReportCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let (args, merge) = match cmd {
        ReportCommand::Render(a) => (a, false),
        ReportCommand::Merge(a) => (a, true),
    };
    let mut reports = read_reports(&args.reports)?;
    if merge {
        let mut seen = std::collections::BTreeSet::new();
        for r in &reports {
            if !seen.insert((r.dataset.clone(), r.backend.clone())) {
                return Err(usage(format!("two reports for dataset {:?} and backend {:?}", r.dataset, r.backend)));
            }
        }
        // stable: keeps backend order within each dataset
        reports.sort_by(|a, b| a.dataset.cmp(&b.dataset));
        write_file(&args.out.join("merged.json"), &canonical_json(&reports))?;
    }
    let written = report::write_outputs(&args.out, &reports).map_err(usage)?;
    let summary: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();
    let io = |e: std::io::Error| usage(e);
    write!(out, "{}", report::summary_markdown(&summary)).map_err(io)?;
    writeln!(out, "wrote {} files to {}", written.len() + merge as usize, args.out.display()).map_err(io)?;
    Ok(())
}

fn cmd_serve_check(a: &ServeCheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.timeout > 0.0 && a.timeout.is_finite()) {
        return Err(usage("--timeout must be positive"));
    }
    let task = match a.task {
        WireTask::NliPair => TaskKind::NliPair,
        WireTask::SingleText => TaskKind::SingleText,
    };
    let outcomes = serve_check(&a.endpoint, task, Duration::from_secs_f64(a.timeout));
    let io = |e: std::io::Error| usage(e);
    for o in &outcomes {
        writeln!(out, "{} {:<18} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail).map_err(io)?;
    }
    if outcomes.iter().any(|o| o.name == "health" && !o.passed) {
        return Err(CliError::Backend(format!("{} is not healthy or unreachable", a.endpoint)));
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::Check(format!("{failed} conformance check(s) failed")));
    }
    Ok(())
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    std::env::var_os("XEVAL_CONFIG").map(PathBuf::from)
}

fn toml_to_arg(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(a) => a.iter().map(toml_to_arg).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
        _ => None,
    }
}

struct FlagInfo {
    long: String,
    takes_value: bool,
}

fn flags_of(cmd: &clap::Command) -> Vec<FlagInfo> {
    cmd.get_arguments()
        .filter_map(|a| {
            Some(FlagInfo {
                long: a.get_long()?.to_string(),
                takes_value: a.get_action().takes_values(),
            })
        })
        .filter(|f| f.long != "config" && f.long != "help" && f.long != "version")
        .collect()
}

/// Inserts config-file settings as flags right after the subcommand, so that
/// flags given on the command line (which come later) override them.
fn inject_config(args: Vec<OsString>, table: &toml::Table) -> Result<Vec<OsString>, CliError> {
    let root = Cli::command();
    let mut idx = None;
    let mut path: Vec<String> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy().to_string();
        if s == "--config" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            let parent = path.iter().try_fold(&root, |c, name| c.find_subcommand(name));
            match parent.and_then(|p| p.find_subcommand(&s)) {
                Some(_) => {
                    path.push(s);
                    idx = Some(i);
                }
                None => break,
            }
            if path.len() == 2 || (path.len() == 1 && path[0] != "report") {
                break;
            }
        }
        i += 1;
    }
    let Some(idx) = idx else {
        return Ok(args);
    };
    let sub = path.iter().try_fold(&root, |c, name| c.find_subcommand(name)).expect("found above");
    let flags = flags_of(sub);
    let every_flag: Vec<String> = root
        .get_subcommands()
        .flat_map(|c| std::iter::once(c).chain(c.get_subcommands()))
        .flat_map(|c| flags_of(c).into_iter().map(|f| f.long))
        .collect();

    let mut settings: BTreeMap<String, toml::Value> = BTreeMap::new();
    for (key, value) in table {
        if value.is_table() {
            continue;
        }
        let long = key.replace('_', "-");
        if !every_flag.contains(&long) {
            return Err(usage(format!("unknown config key {key:?}")));
        }
        settings.insert(long, value.clone());
    }
    let section_name = path[0].clone();
    for name in [section_name.clone(), section_name.replace('-', "_")] {
        if let Some(toml::Value::Table(section)) = table.get(&name) {
            for (key, value) in section {
                let long = key.replace('_', "-");
                if !flags.iter().any(|f| f.long == long) {
                    return Err(usage(format!("unknown config key {key:?} in [{name}]")));
                }
                settings.insert(long, value.clone());
            }
        }
    }
    let mut injected: Vec<OsString> = Vec::new();
    for (long, value) in settings {
        let Some(flag) = flags.iter().find(|f| f.long == long) else {
            continue;
        };
        if flag.takes_value {
            let v = toml_to_arg(&value).ok_or_else(|| usage(format!("unsupported value for config key {long:?}")))?;
            injected.push(format!("--{long}").into());
            injected.push(v.into());
        } else {
            match value {
                toml::Value::Boolean(true) => injected.push(format!("--{long}").into()),
                toml::Value::Boolean(false) => {}
                _ => return Err(usage(format!("config key {long:?} takes true or false"))),
            }
        }
    }
    let mut out = args[..=idx].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[idx + 1..]);
    Ok(out)
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Some(path) = config_path(&args) {
        let table = fs::read_to_string(&path)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))
            .and_then(|text| {
                text.parse::<toml::Table>()
                    .map_err(|e| usage(format!("config {}: {e}", path.display())))
            })
            .and_then(|table| inject_config(args.clone(), &table));
        match table {
            Ok(a) => args = a,
            Err(e) => {
                let _ = writeln!(err, "error: {}", e.message());
                return e.exit_code();
            }
        }
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{rendered}");
                EXIT_OK
            };
        }
    };
    let result = match &cli.command {
        Command::Explain(a) => cmd_explain(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out, err),
        Command::Oracle(a) => cmd_oracle(a, out),
        Command::Report(c) => cmd_report(c, out),
        Command::ServeCheck(a) => cmd_serve_check(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("xeval").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn backend_specs() {
        let mk = |s: &str| {
            backend_from_spec(&BackendArgs {
                backend: s.into(),
                timeout: 1.0,
                max_batch: 8,
                retries: 0,
            })
        };
        assert_eq!(mk("synthetic:keywords").unwrap().name(), "synthetic:keywords");
        assert_eq!(mk("synthetic:demo@2").unwrap().name(), "synthetic:demo@2");
        assert!(mk("synthetic:constant").is_ok());
        assert!(matches!(mk("synthetic:constant@2"), Err(CliError::Usage(_))));
        assert!(matches!(mk("synthetic:keywords@x"), Err(CliError::Usage(_))));
        assert!(matches!(mk("synthetic:nope"), Err(CliError::Usage(_))));
        assert!(matches!(mk("gpt"), Err(CliError::Usage(_))));
        assert!(mk("http://127.0.0.1:9").is_ok());
    }

    #[test]
    fn missing_backend_is_usage_error() {
        let (code, _, err) = run_capture(&["explain", "--premise", "a", "--hypothesis", "b"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--backend"), "{err}");
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        for sub in ["explain", "evaluate", "oracle", "report", "serve-check"] {
            assert!(out.contains(sub), "{sub}");
        }
    }

    #[test]
    fn explain_nli_inline() {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("e");
        let (code, out, err) = run_capture(&[
            "explain",
            "--backend",
            "synthetic:demo",
            "--premise",
            "A man in an orange vest leans over a pickup truck.",
            "--hypothesis",
            "A man is touching a truck.",
            "--no-color",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("  1. touching"), "{out}");
        let scores: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("scores.json")).unwrap()).unwrap();
        assert_eq!(scores["target_name"], "entailment");
        assert_eq!(scores["tokens"].as_array().unwrap().len(), 17);
        assert!(out_dir.join("heat.html").exists());
    }

    #[test]
    fn explain_zsc_inline() {
        let dir = tempfile::tempdir().unwrap();
        let (code, out, err) = run_capture(&[
            "explain",
            "--backend",
            "synthetic:keywords",
            "--task",
            "zsc",
            "--question",
            "What do bees make from flower nectar?",
            "--candidates",
            "honey,paper,bread",
            "--no-color",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("target honey"), "{out}");
    }

    #[test]
    fn explain_from_bundled_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (code, out, err) = run_capture(&[
            "explain",
            "--backend",
            "synthetic:keywords",
            "--dataset",
            "bundled:mini_esnli",
            "--id",
            "c01",
            "--target",
            "contradiction",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("\x1b[48;2;"));
        let (code, _, _) = run_capture(&["explain", "--backend", "synthetic:keywords", "--dataset", "bundled:mini_esnli", "--id", "zz"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn oracle_pass_and_fail() {
        let (code, out, _) = run_capture(&["oracle", "--trials", "20", "--seed", "1"]);
        assert_eq!(code, 0, "{out}");
        assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4);
        let (code, out, _) = run_capture(&["oracle", "--trials", "20", "--inject-error", "0.001"]);
        assert_eq!(code, EXIT_CHECK_FAILED, "{out}");
    }

    #[test]
    fn unreachable_remote_is_backend_error() {
        let dir = tempfile::tempdir().unwrap();
        let (code, _, err) = run_capture(&[
            "evaluate",
            "--dataset",
            "bundled:mini_esnli",
            "--backend",
            "http://127.0.0.1:1",
            "--retries",
            "0",
            "--timeout",
            "1",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_BACKEND, "{err}");
    }

    #[test]
    fn config_file_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("xeval.toml");
        fs::write(&cfg, "backend = \"synthetic:keywords\"\ntrials = 7\n[oracle]\nseed = 3\n").unwrap();
        let args = |extra: &[&str]| {
            let mut v: Vec<OsString> = vec!["xeval".into(), "--config".into(), cfg.clone().into(), "oracle".into()];
            v.extend(extra.iter().map(OsString::from));
            v
        };
        let table: toml::Table = fs::read_to_string(&cfg).unwrap().parse().unwrap();
        let injected = inject_config(args(&["--trials", "9"]), &table).unwrap();
        let cli = Cli::try_parse_from(&injected).unwrap();
        match cli.command {
            Command::Oracle(o) => assert_eq!((o.trials, o.seed), (9, 3)),
            _ => panic!(),
        }
        let injected = inject_config(args(&[]), &table).unwrap();
        match Cli::try_parse_from(&injected).unwrap().command {
            Command::Oracle(o) => assert_eq!(o.trials, 7),
            _ => panic!(),
        }

        fs::write(&cfg, "bogus = 1\n").unwrap();
        let (code, _, err) = run_capture(&["--config", cfg.to_str().unwrap(), "oracle"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("bogus"));
    }

    #[test]
    fn config_supplies_required_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        let out_dir = dir.path().join("o");
        fs::write(
            &cfg,
            format!(
                "[explain]\nbackend = \"synthetic:keywords\"\nno_color = true\nout = {:?}\n",
                out_dir.to_str().unwrap()
            ),
        )
        .unwrap();
        let (code, out, err) = run_capture(&[
            "--config",
            cfg.to_str().unwrap(),
            "explain",
            "--premise",
            "A cat is sleeping on the couch.",
            "--hypothesis",
            "The cat is never still.",
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("target contradiction"), "{out}");
        assert!(out_dir.join("scores.json").exists());
    }
}
