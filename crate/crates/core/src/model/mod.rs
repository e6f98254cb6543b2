//! Black-box classifier abstraction.
//!
//! Every backend answers the same question: given a batch of already
//! reconstructed inputs (one or two segments each), return one probability
//! distribution per item, in request order.

mod conformance;
pub mod protocol;
mod remote;
mod synthetic;
mod zsc;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conformance::{serve_check, CheckOutcome};
pub use remote::{HealthInfo, RemoteBackend, RemoteConfig};
pub use synthetic::{ConstantClassifier, SyntheticKeywordClassifier};
pub use zsc::{zsc_predict, ZeroShotClassifier, DEFAULT_TEMPLATE};

/// Tolerance on the probability sum of a valid distribution.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Class names used by every NLI backend in this crate.
pub const NLI_CLASSES: [&str; 3] = ["entailment", "neutral", "contradiction"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Transport failure; the call may succeed if retried.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("invalid distribution: {0}")]
    DistributionInvalid(String),
    #[error("{task} backend expects {expected} segment(s) per item, got {got}")]
    ArityMismatch {
        task: TaskKind,
        expected: usize,
        got: usize,
    },
    #[error("invalid hypothesis template: {0}")]
    TemplateInvalid(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Shape of the inputs a backend accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "nli-pair")]
    NliPair,
    #[serde(rename = "single-text")]
    SingleText,
}

impl TaskKind {
    pub fn arity(self) -> usize {
        match self {
            TaskKind::NliPair => 2,
            TaskKind::SingleText => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::NliPair => "nli-pair",
            TaskKind::SingleText => "single-text",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Class probability vector returned by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDist {
    probs: Vec<f64>,
    class_names: Vec<String>,
}

impl PredictionDist {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>, class_names: Vec<String>) -> Result<Self, BackendError> {
        if class_names.len() < 2 {
            return Err(BackendError::DistributionInvalid(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if probs.len() != class_names.len() {
            return Err(BackendError::DistributionInvalid(format!(
                "{} probabilities for {} classes",
                probs.len(),
                class_names.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(BackendError::DistributionInvalid(format!(
                "probability {p} is negative or not finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(BackendError::DistributionInvalid(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(PredictionDist { probs, class_names })
    }

    /// Softmax of raw scores. Always valid for finite input.
    pub fn from_logits(logits: &[f64], class_names: Vec<String>) -> Result<Self, BackendError> {
        Self::new(softmax(logits), class_names)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn predicted_name(&self) -> &str {
        &self.class_names[self.argmax()]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// A classifier that can only be queried, never inspected.
///
/// Implementations must be shareable across worker threads and must return
/// exactly one distribution per item, in request order.
pub trait ClassifierBackend: Send + Sync {
    fn task(&self) -> TaskKind;

    /// Class names, if known before the first prediction.
    fn class_names(&self) -> Option<Vec<String>>;

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError>;

    /// Short identifier for reports.
    fn name(&self) -> String {
        "backend".to_string()
    }
}

impl<T: ClassifierBackend + ?Sized> ClassifierBackend for &T {
    fn task(&self) -> TaskKind {
        (**self).task()
    }
    fn class_names(&self) -> Option<Vec<String>> {
        (**self).class_names()
    }
    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        (**self).predict_batch(inputs)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: ClassifierBackend + ?Sized> ClassifierBackend for Box<T> {
    fn task(&self) -> TaskKind {
        (**self).task()
    }
    fn class_names(&self) -> Option<Vec<String>> {
        (**self).class_names()
    }
    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        (**self).predict_batch(inputs)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: ClassifierBackend + ?Sized> ClassifierBackend for std::sync::Arc<T> {
    fn task(&self) -> TaskKind {
        (**self).task()
    }
    fn class_names(&self) -> Option<Vec<String>> {
        (**self).class_names()
    }
    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        (**self).predict_batch(inputs)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// Checks that every item has the segment count the task expects.
pub fn check_arity(task: TaskKind, inputs: &[Vec<String>]) -> Result<(), BackendError> {
    if let Some(item) = inputs.iter().find(|i| i.len() != task.arity()) {
        return Err(BackendError::ArityMismatch {
            task,
            expected: task.arity(),
            got: item.len(),
        });
    }
    Ok(())
}

/// Predicts a single item.
pub fn predict_one<B: ClassifierBackend + ?Sized>(
    backend: &B,
    input: &[String],
) -> Result<PredictionDist, BackendError> {
    let mut out = backend.predict_batch(&[input.to_vec()])?;
    match out.pop() {
        Some(d) if out.is_empty() => Ok(d),
        _ => Err(BackendError::ProtocolViolation(
            "expected exactly one distribution".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn dist_validation() {
        assert!(PredictionDist::new(vec![0.5, 0.5], names(2)).is_ok());
        assert!(PredictionDist::new(vec![0.5, 0.4], names(2)).is_err());
        assert!(PredictionDist::new(vec![1.0], names(1)).is_err());
        assert!(PredictionDist::new(vec![1.2, -0.2], names(2)).is_err());
        assert!(PredictionDist::new(vec![0.5, 0.5], names(3)).is_err());
        assert!(PredictionDist::new(vec![f64::NAN, 1.0], names(2)).is_err());
        assert!(PredictionDist::new(vec![0.5, 0.5 + 5e-7], names(2)).is_ok());
    }

    #[test]
    fn argmax_ties_go_low() {
        let d = PredictionDist::new(vec![0.4, 0.4, 0.2], names(3)).unwrap();
        assert_eq!(d.argmax(), 0);
        let d = PredictionDist::new(vec![0.2, 0.4, 0.4], names(3)).unwrap();
        assert_eq!(d.argmax(), 1);
        assert_eq!(d.predicted_name(), "c1");
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[0.0, 0.0, 0.0]);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn arity_checked() {
        let items = vec![vec!["a".to_string()]];
        assert!(check_arity(TaskKind::SingleText, &items).is_ok());
        assert_eq!(
            check_arity(TaskKind::NliPair, &items).unwrap_err(),
            BackendError::ArityMismatch {
                task: TaskKind::NliPair,
                expected: 2,
                got: 1
            }
        );
    }
}
