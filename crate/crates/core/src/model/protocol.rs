//! JSON wire format spoken between [`RemoteBackend`](super::RemoteBackend)
//! and prediction servers.
//!
//! ```text
//! POST /predict   {"task": "nli-pair", "items": [["premise", "hypothesis"], ...]}
//!              -> {"class_names": [...], "probs": [[...], ...]}
//! GET  /health -> {"status": "ok", "model": "<identifier>"}
//! errors       -> HTTP 4xx/5xx with {"error": "<message>"}
//! ```

use serde::{Deserialize, Serialize};

use super::{ClassifierBackend, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub task: TaskKind,
    pub items: RequestItems,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestItems {
    Pairs(Vec<(String, String)>),
    Texts(Vec<String>),
}

impl RequestItems {
    pub fn len(&self) -> usize {
        match self {
            RequestItems::Pairs(v) => v.len(),
            RequestItems::Texts(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Converts segment lists to wire items. Panics if arity does not match `task`.
    pub fn from_segments(task: TaskKind, items: &[Vec<String>]) -> Self {
        match task {
            TaskKind::NliPair => RequestItems::Pairs(
                items
                    .iter()
                    .map(|i| (i[0].clone(), i[1].clone()))
                    .collect(),
            ),
            TaskKind::SingleText => {
                RequestItems::Texts(items.iter().map(|i| i[0].clone()).collect())
            }
        }
    }

    pub fn into_segments(self) -> Vec<Vec<String>> {
        match self {
            RequestItems::Pairs(v) => v.into_iter().map(|(a, b)| vec![a, b]).collect(),
            RequestItems::Texts(v) => v.into_iter().map(|t| vec![t]).collect(),
        }
    }

    fn kind(&self) -> Option<TaskKind> {
        match self {
            _ if self.is_empty() => None,
            RequestItems::Pairs(_) => Some(TaskKind::NliPair),
            RequestItems::Texts(_) => Some(TaskKind::SingleText),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub class_names: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthBody {
    pub status: String,
    pub model: String,
}

fn error_json(message: impl Into<String>) -> String {
    serde_json::to_string(&ErrorBody {
        error: message.into(),
    })
    .expect("error body serializes")
}

/// Server-side handler for `POST /predict`: returns the HTTP status and JSON body.
///
/// Lets any in-process [`ClassifierBackend`] stand behind the wire protocol,
/// which is how the test suite and examples exercise the remote client.
pub fn handle_predict<B: ClassifierBackend + ?Sized>(backend: &B, body: &str) -> (u16, String) {
    let request: PredictRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return (400, error_json(format!("malformed request: {e}"))),
    };
    if request.task != backend.task() {
        return (
            400,
            error_json(format!(
                "server handles {} requests, got {}",
                backend.task(),
                request.task
            )),
        );
    }
    if let Some(kind) = request.items.kind() {
        if kind != request.task {
            return (400, error_json(format!("items do not match task {}", request.task)));
        }
    }
    let items = request.items.into_segments();
    match backend.predict_batch(&items) {
        Ok(dists) => {
            let class_names = dists
                .first()
                .map(|d| d.class_names().to_vec())
                .or_else(|| backend.class_names())
                .unwrap_or_default();
            let response = PredictResponse {
                class_names,
                probs: dists.iter().map(|d| d.probs().to_vec()).collect(),
            };
            (200, serde_json::to_string(&response).expect("response serializes"))
        }
        Err(e) => (500, error_json(e.to_string())),
    }
}

/// Server-side handler for `GET /health`.
pub fn handle_health(model: &str) -> (u16, String) {
    let body = HealthBody {
        status: "ok".into(),
        model: model.into(),
    };
    (200, serde_json::to_string(&body).expect("health serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SyntheticKeywordClassifier;

    #[test]
    fn request_shapes() {
        let pair = r#"{"task":"nli-pair","items":[["p","h"],["p2","h2"]]}"#;
        let r: PredictRequest = serde_json::from_str(pair).unwrap();
        assert_eq!(r.task, TaskKind::NliPair);
        assert_eq!(r.items.len(), 2);
        assert_eq!(serde_json::to_string(&r).unwrap(), pair);

        let single = r#"{"task":"single-text","items":["a","b","c"]}"#;
        let r: PredictRequest = serde_json::from_str(single).unwrap();
        assert_eq!(r.items, RequestItems::Texts(vec!["a".into(), "b".into(), "c".into()]));
        assert_eq!(serde_json::to_string(&r).unwrap(), single);
    }

    #[test]
    fn handler_round_trip() {
        let clf = SyntheticKeywordClassifier::nli().with_coefficient(0, "touching", 2.0);
        let body = r#"{"task":"nli-pair","items":[["a man","is touching"],["a man","sleeps"]]}"#;
        let (status, json) = handle_predict(&clf, body);
        assert_eq!(status, 200);
        let resp: PredictResponse = serde_json::from_str(&json).unwrap();
        assert_eq!(resp.class_names, ["entailment", "neutral", "contradiction"]);
        assert_eq!(resp.probs.len(), 2);
        assert!(resp.probs[0][0] > resp.probs[1][0]);
    }

    #[test]
    fn handler_rejects_bad_requests() {
        let clf = SyntheticKeywordClassifier::nli();
        let (status, json) = handle_predict(&clf, "{nope");
        assert_eq!(status, 400);
        assert!(serde_json::from_str::<ErrorBody>(&json).is_ok());
        let (status, _) = handle_predict(&clf, r#"{"task":"single-text","items":["a"]}"#);
        assert_eq!(status, 400);
        let (status, _) = handle_predict(&clf, r#"{"task":"nli-pair","items":["a"]}"#);
        assert_eq!(status, 400);
    }
}
