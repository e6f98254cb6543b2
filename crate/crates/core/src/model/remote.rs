use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use ureq::Agent;

use super::protocol::{ErrorBody, HealthBody, PredictRequest, PredictResponse, RequestItems};
use super::{check_arity, BackendError, ClassifierBackend, PredictionDist, TaskKind};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    pub task: TaskKind,
    pub timeout: Duration,
    pub max_batch: usize,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubles each attempt.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            task: TaskKind::NliPair,
            timeout: Duration::from_secs(30),
            max_batch: 256,
            retries: 3,
            backoff: Duration::from_millis(50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthInfo {
    pub status: String,
    pub model: String,
}

/// Client for a prediction server speaking the [`protocol`](super::protocol) wire format.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: Agent,
    class_names: Mutex<Option<Vec<String>>>,
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(mut config: RemoteConfig) -> Result<Self, BackendError> {
        if config.max_batch == 0 {
            return Err(BackendError::InvalidRequest("max_batch must be at least 1".into()));
        }
        while config.endpoint.ends_with('/') {
            config.endpoint.pop();
        }
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            config,
            agent,
            class_names: Mutex::new(None),
        })
    }

    /// NLI backend at `endpoint` with default retry policy.
    pub fn connect(endpoint: &str, timeout: Duration, max_batch: usize) -> Result<Self, BackendError> {
        let mut config = RemoteConfig::new(endpoint);
        config.timeout = timeout;
        config.max_batch = max_batch;
        Self::new(config)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn health(&self) -> Result<HealthInfo, BackendError> {
        let url = format!("{}/health", self.config.endpoint);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| BackendError::Unavailable(format!("GET {url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Unavailable(format!("reading health body: {e}")))?;
        if status != 200 {
            return Err(BackendError::Unavailable(format!("health returned HTTP {status}: {text}")));
        }
        let body: HealthBody = serde_json::from_str(&text)
            .map_err(|e| BackendError::ProtocolViolation(format!("health body: {e}")))?;
        if body.status != "ok" {
            return Err(BackendError::Unavailable(format!("server status {:?}", body.status)));
        }
        Ok(HealthInfo {
            status: body.status,
            model: body.model,
        })
    }

    fn attempt(&self, body: &str, expected: usize) -> Result<PredictResponse, Attempt> {
        let url = format!("{}/predict", self.config.endpoint);
        let mut resp = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(BackendError::Unavailable(format!("POST {url}: {e}"))))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(BackendError::Unavailable(format!("reading body: {e}"))))?;
        if status != 200 {
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            let err = format!("HTTP {status}: {message}");
            return Err(if status >= 500 {
                Attempt::Retry(BackendError::Unavailable(err))
            } else {
                Attempt::Fatal(BackendError::ProtocolViolation(err))
            });
        }
        let parsed: PredictResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(BackendError::ProtocolViolation(format!("response body: {e}"))))?;
        if parsed.probs.len() != expected {
            return Err(Attempt::Fatal(BackendError::ProtocolViolation(format!(
                "sent {expected} items, received {} distributions",
                parsed.probs.len()
            ))));
        }
        Ok(parsed)
    }

    fn call(&self, chunk: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        let request = PredictRequest {
            task: self.config.task,
            items: RequestItems::from_segments(self.config.task, chunk),
        };
        let body = serde_json::to_string(&request).expect("request serializes");
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        let response = loop {
            match self.attempt(&body, chunk.len()) {
                Ok(r) => break r,
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.config.retries => return Err(e),
                Err(Attempt::Retry(_)) => {
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        };
        let names = {
            let mut cached = self.class_names.lock().expect("class name cache poisoned");
            match cached.as_ref() {
                Some(names) if *names != response.class_names => {
                    return Err(BackendError::ProtocolViolation(format!(
                        "class names changed from {names:?} to {:?}",
                        response.class_names
                    )))
                }
                Some(names) => names.clone(),
                None => {
                    *cached = Some(response.class_names.clone());
                    response.class_names
                }
            }
        };
        response
            .probs
            .into_iter()
            .map(|p| PredictionDist::new(p, names.clone()))
            .collect()
    }
}

impl ClassifierBackend for RemoteBackend {
    fn task(&self) -> TaskKind {
        self.config.task
    }

    fn class_names(&self) -> Option<Vec<String>> {
        self.class_names.lock().expect("class name cache poisoned").clone()
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        check_arity(self.config.task, inputs)?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.config.max_batch) {
            out.extend(self.call(chunk)?);
        }
        Ok(out)
    }

    fn name(&self) -> String {
        self.config.endpoint.clone()
    }
}
