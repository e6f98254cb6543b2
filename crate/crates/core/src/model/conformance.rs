//! Protocol conformance probes for a running prediction server.

use std::time::Duration;

use serde::Serialize;
use ureq::Agent;

use super::protocol::ErrorBody;
use super::{BackendError, ClassifierBackend, RemoteBackend, RemoteConfig, TaskKind, SUM_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, result: Result<String, String>) -> Self {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn probe_items(task: TaskKind, n: usize) -> Vec<Vec<String>> {
    const PAIRS: [(&str, &str); 3] = [
        ("Look, there's a legend here.", "See, there is a well-known hero here."),
        (
            "Yeah, I know, and I did that all through college and it worked too.",
            "I did that all through college but it never worked.",
        ),
        (
            "Boats in daily use lie within feet of the fashionable bars and restaurants.",
            "Bars and restaurants are interesting places.",
        ),
    ];
    (0..n)
        .map(|i| {
            let (p, h) = PAIRS[i % PAIRS.len()];
            let suffix = if i < PAIRS.len() { String::new() } else { format!(" {i}") };
            match task {
                TaskKind::NliPair => vec![p.to_string(), format!("{h}{suffix}")],
                TaskKind::SingleText => vec![format!("{p}{suffix}")],
            }
        })
        .collect()
}

fn max_prob_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Probes health, ordering, normalization, batching and malformed-request
/// handling. Each check is reported separately; none aborts the others.
pub fn serve_check(endpoint: &str, task: TaskKind, timeout: Duration) -> Vec<CheckOutcome> {
    let mut config = RemoteConfig::new(endpoint);
    config.task = task;
    config.timeout = timeout;
    config.retries = 0;
    config.max_batch = usize::MAX;
    let backend = match RemoteBackend::new(config) {
        Ok(b) => b,
        Err(e) => return vec![CheckOutcome::new("client", Err(e.to_string()))],
    };
    let mut out = Vec::new();

    out.push(CheckOutcome::new(
        "health",
        backend
            .health()
            .map(|h| format!("model {:?}", h.model))
            .map_err(|e| e.to_string()),
    ));

    let items = probe_items(task, 3);
    let ordering = (|| -> Result<String, BackendError> {
        let forward = backend.predict_batch(&items)?;
        let reversed: Vec<_> = items.iter().rev().cloned().collect();
        let backward = backend.predict_batch(&reversed)?;
        let worst = forward
            .iter()
            .zip(backward.iter().rev())
            .map(|(a, b)| max_prob_diff(a.probs(), b.probs()))
            .fold(0.0, f64::max);
        if worst > 1e-9 {
            return Err(BackendError::ProtocolViolation(format!(
                "reordering the batch changed results by {worst:e}"
            )));
        }
        // single-item requests cannot be permuted
        for (i, (item, batched)) in items.iter().zip(&forward).enumerate() {
            let alone = backend.predict_batch(std::slice::from_ref(item))?;
            let diff = alone.first().map_or(f64::INFINITY, |d| max_prob_diff(d.probs(), batched.probs()));
            if diff > 1e-9 {
                return Err(BackendError::ProtocolViolation(format!(
                    "item {i} differs by {diff:e} between batched and single requests"
                )));
            }
        }
        Ok("results follow request order".into())
    })();
    out.push(CheckOutcome::new("ordering", ordering.map_err(|e| e.to_string())));

    let batch = probe_items(task, 64);
    let normalization = backend
        .predict_batch(&batch)
        .map_err(|e| e.to_string())
        .and_then(|dists| {
            if dists.len() != batch.len() {
                return Err(format!("{} items, {} distributions", batch.len(), dists.len()));
            }
            let worst = dists
                .iter()
                .map(|d| (d.probs().iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            Ok(format!(
                "64 distributions, max |sum - 1| = {worst:.2e} (tolerance {SUM_TOLERANCE:e}); classes {:?}",
                backend.class_names().unwrap_or_default()
            ))
        });
    out.push(CheckOutcome::new("normalization", normalization));

    let agent: Agent = Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}/predict", backend.config().endpoint);
    let malformed = agent
        .post(&url)
        .header("Content-Type", "application/json")
        .send("{\"task\": ")
        .map_err(|e| e.to_string())
        .and_then(|mut resp| {
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
            if !(400..500).contains(&status) {
                return Err(format!("expected HTTP 4xx, got {status}"));
            }
            serde_json::from_str::<ErrorBody>(&text)
                .map(|b| format!("HTTP {status}: {}", b.error))
                .map_err(|_| format!("HTTP {status} without an error body: {text}"))
        });
    out.push(CheckOutcome::new("malformed-request", malformed));

    out
}
