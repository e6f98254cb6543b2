#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

use xeval::model::protocol::{handle_health, handle_predict, PredictRequest};
use xeval::model::ClassifierBackend;

pub type Handler = dyn Fn(&str, &str, usize) -> (u16, String) + Send + Sync;

/// Local HTTP server; `handler(path, body, predict_call_index)` produces each response.
pub struct MockServer {
    pub endpoint: String,
    pub predict_calls: Arc<AtomicUsize>,
    pub batch_sizes: Arc<Mutex<Vec<usize>>>,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(handler: Box<Handler>) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind"));
        let endpoint = format!("http://{}", server.server_addr().to_ip().expect("tcp"));
        let predict_calls = Arc::new(AtomicUsize::new(0));
        let batch_sizes = Arc::new(Mutex::new(Vec::new()));
        let thread = {
            let server = server.clone();
            let calls = predict_calls.clone();
            let sizes = batch_sizes.clone();
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let mut body = String::new();
                    let _ = req.as_reader().read_to_string(&mut body);
                    let path = req.url().to_string();
                    let index = if path == "/predict" {
                        if let Ok(r) = serde_json::from_str::<PredictRequest>(&body) {
                            sizes.lock().unwrap().push(r.items.len());
                        }
                        calls.fetch_add(1, Ordering::SeqCst)
                    } else {
                        0
                    };
                    let (status, json) = handler(&path, &body, index);
                    let header = Header::from_bytes("Content-Type", "application/json").unwrap();
                    let _ = req.respond(Response::from_string(json).with_status_code(status).with_header(header));
                }
            })
        };
        MockServer {
            endpoint,
            predict_calls,
            batch_sizes,
            server,
            thread: Some(thread),
        }
    }

    /// Serves `backend` faithfully.
    pub fn serving<B: ClassifierBackend + 'static>(backend: B) -> Self {
        let name = backend.name();
        Self::start(Box::new(move |path, body, _| match path {
            "/health" => handle_health(&name),
            "/predict" => handle_predict(&backend, body),
            _ => (404, r#"{"error":"not found"}"#.into()),
        }))
    }

    pub fn calls(&self) -> usize {
        self.predict_calls.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("tempdir")
}
