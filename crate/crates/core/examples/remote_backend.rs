//! Talk to a prediction server over HTTP. A local server wraps the synthetic
//! classifier behind the wire protocol so this runs without a model; point
//! `RemoteConfig::new` at a real server to explain a real model.
//!
//! cargo run --example remote_backend

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tiny_http::{Header, Response, Server};

use xeval::corpus;
use xeval::lime::{explain, LimeConfig};
use xeval::model::protocol::{handle_health, handle_predict};
use xeval::model::{serve_check, RemoteBackend, RemoteConfig, TaskKind};
use xeval::text::tokenize;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = Arc::new(Server::http("127.0.0.1:0").map_err(|e| e.to_string())?);
    let endpoint = format!("http://{}", server.server_addr().to_ip().expect("tcp"));
    let calls = Arc::new(AtomicUsize::new(0));
    {
        let server = server.clone();
        let calls = calls.clone();
        std::thread::spawn(move || {
            let backend = corpus::keyword_classifier();
            for mut req in server.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (status, json) = match req.url() {
                    "/health" => handle_health("synthetic:keywords"),
                    "/predict" => {
                        calls.fetch_add(1, Ordering::SeqCst);
                        handle_predict(&backend, &body)
                    }
                    _ => (404, "{\"error\":\"not found\"}".to_string()),
                };
                let header = Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = req.respond(Response::from_string(json).with_status_code(status).with_header(header));
            }
        });
    }

    for check in serve_check(&endpoint, TaskKind::NliPair, Duration::from_secs(5)) {
        println!("{} {}: {}", if check.passed { "ok  " } else { "FAIL" }, check.name, check.detail);
    }

    let mut config = RemoteConfig::new(&endpoint);
    config.max_batch = 64;
    let remote = RemoteBackend::new(config)?;
    let health = remote.health()?;
    println!("\nserver model: {health:?}");

    let input = tokenize(&["A man is sitting alone indoors.", "Nobody is in the room."])?;
    let before = calls.load(Ordering::SeqCst);
    let expl = explain(&input, &remote, None, &LimeConfig::default())?;
    println!(
        "{:?} from {} perturbations in {} requests",
        expl.target_name,
        expl.n_evaluations,
        calls.load(Ordering::SeqCst) - before
    );
    for (w, s) in input.words().iter().zip(&expl.scores) {
        println!("  {w:<8} {s:+.3}");
    }
    Ok(())
}
