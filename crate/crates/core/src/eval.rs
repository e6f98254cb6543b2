//! Experiment harness: accuracy with confidence intervals, per-instance
//! explanation metrics, and mean / standard-error aggregation overall and by
//! gold label.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{AnnotatedInstance, DatasetTask};
use crate::lime::{derive_seed, explain, predict_chunked, LimeConfig, LimeError};
use crate::metrics::{aggregated_comprehensiveness, plausibility_iou, BinSet, MetricError, MetricRecord};
use crate::model::{zsc_predict, BackendError, ClassifierBackend, ZeroShotClassifier, DEFAULT_TEMPLATE};

const Z_95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no instances to evaluate")]
    NoInstances,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("every instance failed ({} failures); first: {}", .0.len(), .0[0].error)]
    AllFailed(Vec<InstanceFailure>),
}

/// Mean with standard error of the mean (sample std, n - 1 denominator; 0 when n = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStat {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

impl AggregateStat {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sem = if n == 1 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Some(AggregateStat { mean, sem, n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Normal,
    Wilson,
}

impl std::str::FromStr for CiMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(CiMethod::Normal),
            "wilson" => Ok(CiMethod::Wilson),
            other => Err(format!("unknown CI method {other:?} (normal or wilson)")),
        }
    }
}

/// 95% confidence interval for a proportion, clamped to [0, 1].
pub fn proportion_ci(p_hat: f64, n: usize, method: CiMethod) -> (f64, f64) {
    let n = n as f64;
    let (lo, hi) = match method {
        CiMethod::Normal => {
            let half = Z_95 * (p_hat * (1.0 - p_hat) / n).sqrt();
            (p_hat - half, p_hat + half)
        }
        CiMethod::Wilson => {
            let z2 = Z_95 * Z_95;
            let denom = 1.0 + z2 / n;
            let centre = (p_hat + z2 / (2.0 * n)) / denom;
            let half = Z_95 * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
            (centre - half, centre + half)
        }
    };
    (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub correct: usize,
    pub n: usize,
    pub method: CiMethod,
}

impl Accuracy {
    pub fn from_counts(correct: usize, n: usize, method: CiMethod) -> Self {
        let accuracy = correct as f64 / n as f64;
        let (ci_lo, ci_hi) = proportion_ci(accuracy, n, method);
        Accuracy {
            accuracy,
            ci_lo,
            ci_hi,
            correct,
            n,
            method,
        }
    }
}

/// Settings that determine a run's output. Snapshotted into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub lime: LimeConfig,
    pub bins: BinSet,
    /// Mean human rationale ratio used to pick `k` for IOU; IOU is skipped when absent.
    pub plausibility_ratio: Option<f64>,
    pub ci_method: CiMethod,
    /// Hypothesis template for zero-shot instances.
    pub template: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lime: LimeConfig::default(),
            bins: BinSet::default(),
            plausibility_ratio: None,
            ci_method: CiMethod::Normal,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

fn labels_match(predicted: &str, gold: &str) -> bool {
    predicted.eq_ignore_ascii_case(gold)
}

fn predicted_labels<B: ClassifierBackend + ?Sized>(
    instances: &[AnnotatedInstance],
    backend: &B,
    config: &EvalConfig,
) -> Result<Vec<String>, BackendError> {
    let (zsc, nli): (Vec<_>, Vec<_>) = instances.iter().enumerate().partition(|(_, i)| i.task == DatasetTask::Zsc);
    let mut out = vec![String::new(); instances.len()];
    let items: Vec<Vec<String>> = nli.iter().map(|(_, i)| i.segments.clone()).collect();
    let dists = predict_chunked(backend, &items, config.lime.batch_size)?;
    for ((idx, _), d) in nli.iter().zip(dists) {
        out[*idx] = d.predicted_name().to_string();
    }
    let zsc_preds: Vec<(usize, String)> = zsc
        .par_iter()
        .map(|(idx, inst)| {
            let d = zsc_predict(backend, &inst.segments[0], &inst.candidates, &config.template)?;
            Ok((*idx, d.predicted_name().to_string()))
        })
        .collect::<Result<_, BackendError>>()?;
    for (idx, name) in zsc_preds {
        out[idx] = name;
    }
    Ok(out)
}

/// Fraction of instances whose argmax prediction equals the gold label.
pub fn evaluate_accuracy<B: ClassifierBackend + ?Sized>(
    instances: &[AnnotatedInstance],
    backend: &B,
    config: &EvalConfig,
) -> Result<Accuracy, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let preds = predicted_labels(instances, backend, config)?;
    let correct = preds
        .iter()
        .zip(instances)
        .filter(|(p, i)| labels_match(p, &i.gold_label))
        .count();
    Ok(Accuracy::from_counts(correct, instances.len(), config.ci_method))
}

/// One explained instance: tokens, scores and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub gold_label: String,
    pub predicted_label: String,
    pub tokens: Vec<String>,
    /// Segment index of every token.
    pub token_segments: Vec<usize>,
    pub scores: Vec<f64>,
    pub full_probability: f64,
    pub local_fidelity_r2: f64,
    pub human_highlights: Option<Vec<usize>>,
    pub metrics: MetricRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregates {
    pub comp_agg: AggregateStat,
    pub iou: Option<AggregateStat>,
}

impl MetricAggregates {
    fn from_records<'a>(records: impl IntoIterator<Item = &'a InstanceRecord>) -> Option<Self> {
        let records: Vec<&InstanceRecord> = records.into_iter().collect();
        let comp: Vec<f64> = records.iter().map(|r| r.metrics.comp_agg).collect();
        let iou: Vec<f64> = records.iter().filter_map(|r| r.metrics.iou).collect();
        Some(MetricAggregates {
            comp_agg: AggregateStat::from_values(&comp)?,
            iou: AggregateStat::from_values(&iou),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub task: DatasetTask,
    pub backend: String,
    /// How multi-annotator highlights were combined, if known.
    pub annotator_policy: Option<String>,
    pub config: EvalConfig,
    /// Accuracy on the full instance set given to the evaluation.
    pub accuracy: Accuracy,
    /// Gold-label counts of the explained subset.
    pub label_counts: BTreeMap<String, usize>,
    pub overall: MetricAggregates,
    /// Aggregates grouped by gold label.
    pub by_label: BTreeMap<String, MetricAggregates>,
    pub records: Vec<InstanceRecord>,
    pub failures: Vec<InstanceFailure>,
    pub notices: Vec<String>,
}

impl RunReport {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Wall-clock details kept out of the report so reports stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub elapsed_seconds: f64,
    pub parallelism: usize,
    pub instances_explained: usize,
    pub version: String,
}

fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_significant(n.as_f64().unwrap_or(0.0), 6);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and floats rounded to 6 significant digits.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = canonicalize(serde_json::to_value(value).expect("serializable"));
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

/// Per-label aggregates for `labels` (all gold labels present when empty).
/// Labels without records are omitted and reported as notices.
pub fn split_by_label(records: &[InstanceRecord], labels: &[String]) -> (BTreeMap<String, MetricAggregates>, Vec<String>) {
    let mut groups: BTreeMap<String, Vec<&InstanceRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.gold_label.clone()).or_default().push(r);
    }
    let wanted: Vec<String> = if labels.is_empty() {
        groups.keys().cloned().collect()
    } else {
        labels.to_vec()
    };
    let mut out = BTreeMap::new();
    let mut notices = Vec::new();
    for label in wanted {
        match groups.get(&label).and_then(|g| MetricAggregates::from_records(g.iter().copied())) {
            Some(agg) => {
                out.insert(label, agg);
            }
            None => notices.push(format!("label {label:?} has no records; omitted from per-label aggregates")),
        }
    }
    (out, notices)
}

/// A record plus an optional notice, or the failure message.
type InstanceOutcome = Result<(InstanceRecord, Option<String>), String>;

fn explain_instance<B: ClassifierBackend + ?Sized>(
    inst: &AnnotatedInstance,
    backend: &B,
    config: &EvalConfig,
) -> Result<(InstanceRecord, Option<String>), String> {
    let input = inst.tokenized();
    let lime = config.lime.clone().with_seed(derive_seed(config.lime.seed, &inst.id));
    let run = |b: &dyn ClassifierBackend| -> Result<_, String> {
        let expl = explain(&input, b, None, &lime).map_err(|e: LimeError| e.to_string())?;
        let comp = aggregated_comprehensiveness(&input, b, expl.target_class, &expl, &config.bins)
            .map_err(|e| e.to_string())?;
        Ok((expl, comp))
    };
    let (expl, comp) = match inst.task {
        DatasetTask::Nli => run(&backend)?,
        DatasetTask::Zsc => {
            let zsc = ZeroShotClassifier::new(backend, inst.candidates.clone(), config.template.clone())
                .map_err(|e| e.to_string())?;
            run(&zsc)?
        }
    };
    let mut notice = None;
    let (iou, k_used) = match (&inst.highlights, config.plausibility_ratio) {
        (Some(h), Some(ratio)) => match plausibility_iou(&expl, h, ratio) {
            Ok((v, k)) => (Some(v), Some(k)),
            Err(MetricError::EmptyHumanRationale) => {
                notice = Some(format!("{}: empty human rationale, IOU excluded", inst.id));
                (None, None)
            }
            Err(e) => return Err(e.to_string()),
        },
        _ => (None, None),
    };
    let tokens: Vec<String> = input.tokens().map(|t| t.text.clone()).collect();
    let token_segments = (0..tokens.len()).map(|i| input.segment_of(i).unwrap_or(0)).collect();
    Ok((
        InstanceRecord {
            id: inst.id.clone(),
            gold_label: inst.gold_label.clone(),
            predicted_label: expl.target_name.clone(),
            tokens,
            token_segments,
            scores: expl.scores.clone(),
            full_probability: expl.full_probability,
            local_fidelity_r2: expl.local_fidelity_r2,
            human_highlights: inst.highlights.as_ref().map(|h| h.iter().copied().collect()),
            metrics: MetricRecord {
                comp_per_bin: comp.comp_per_bin,
                comp_agg: comp.comp_agg,
                iou,
                target_class: expl.target_class,
                k_used,
            },
        },
        notice,
    ))
}

/// Explains every instance with respect to its predicted class and aggregates
/// the metrics. Runs on a pool of `parallelism` threads; results are sorted by
/// id before aggregation, so the report does not depend on the pool size.
pub struct Experiment<'a> {
    pub dataset: &'a str,
    pub annotator_policy: Option<String>,
    /// Labels for the per-label table; empty means every gold label present.
    pub labels: Vec<String>,
    pub config: EvalConfig,
    pub parallelism: usize,
}

impl Experiment<'_> {
    /// `accuracy_set` is scored for accuracy; `explain_set` (usually a subset) is explained.
    pub fn run<B: ClassifierBackend + ?Sized>(
        &self,
        accuracy_set: &[AnnotatedInstance],
        explain_set: &[AnnotatedInstance],
        backend: &B,
    ) -> Result<RunReport, EvalError> {
        if explain_set.is_empty() || accuracy_set.is_empty() {
            return Err(EvalError::NoInstances);
        }
        self.config.lime.validate().map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        if let Some(r) = self.config.plausibility_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(EvalError::InvalidConfig(format!("plausibility ratio {r} outside (0, 1]")));
            }
        }
        let tasks: Vec<DatasetTask> = explain_set.iter().chain(accuracy_set).map(|i| i.task).collect();
        if tasks.iter().any(|t| *t != tasks[0]) {
            return Err(EvalError::InvalidConfig("instances mix nli and zsc tasks".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism.max(1))
            .build()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;

        let (accuracy, outcomes) = pool.install(|| {
            let accuracy = evaluate_accuracy(accuracy_set, backend, &self.config);
            let outcomes: Vec<(String, InstanceOutcome)> = explain_set
                .par_iter()
                .map(|inst| (inst.id.clone(), explain_instance(inst, backend, &self.config)))
                .collect();
            (accuracy, outcomes)
        });
        let accuracy = accuracy?;

        let mut records = Vec::new();
        let mut failures = Vec::new();
        let mut notices = Vec::new();
        for (id, outcome) in outcomes {
            match outcome {
                Ok((rec, notice)) => {
                    records.push(rec);
                    notices.extend(notice);
                }
                Err(error) => failures.push(InstanceFailure { id, error }),
            }
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        failures.sort_by(|a, b| a.id.cmp(&b.id));
        notices.sort();
        let overall = match MetricAggregates::from_records(&records) {
            Some(o) => o,
            None => return Err(EvalError::AllFailed(failures)),
        };
        let (by_label, label_notices) = split_by_label(&records, &self.labels);
        notices.extend(label_notices);
        let mut label_counts = BTreeMap::new();
        for r in &records {
            *label_counts.entry(r.gold_label.clone()).or_insert(0) += 1;
        }
        Ok(RunReport {
            dataset: self.dataset.to_string(),
            task: tasks[0],
            backend: backend.name(),
            annotator_policy: self.annotator_policy.clone(),
            config: self.config.clone(),
            accuracy,
            label_counts,
            overall,
            by_label,
            records,
            failures,
            notices,
        })
    }
}

/// Explains and scores `instances` with one pool; accuracy is computed on the same set.
pub fn run_experiment<B: ClassifierBackend + ?Sized>(
    dataset: &str,
    instances: &[AnnotatedInstance],
    backend: &B,
    config: &EvalConfig,
    parallelism: usize,
) -> Result<RunReport, EvalError> {
    Experiment {
        dataset,
        annotator_policy: None,
        labels: Vec::new(),
        config: config.clone(),
        parallelism,
    }
    .run(instances, instances, backend)
}
