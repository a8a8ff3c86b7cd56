//! The bridge client against a small in-process HTTP server.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use serde_json::{json, Value};
use tagx_core::backend::{BackendError, BridgeClient, GenerationConfig, LlmBackend};
use tagx_core::graph::{GraphParts, Splits, TextAttributedGraph};
use tagx_core::prompt::{build_hybrid_prompt, PromptMode, PromptOptions, PromptTemplate};

#[derive(Debug, Clone)]
struct Request {
    method: String,
    path: String,
    body: Value,
}

type Handler = dyn Fn(&Request, usize) -> (u16, Value) + Send + Sync;

/// Serves `handler(request, index)` on a local port, one connection per
/// request, and records every request it sees.
struct FakeServer {
    url: String,
    log: Arc<Mutex<Vec<Request>>>,
}

impl FakeServer {
    fn start(handler: impl Fn(&Request, usize) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let seen = Arc::clone(&log);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (seen, handler) = (Arc::clone(&seen), Arc::clone(&handler));
                thread::spawn(move || serve(stream, &seen, handler.as_ref()));
            }
        });
        FakeServer { url, log }
    }

    fn requests(&self) -> Vec<Request> {
        self.log.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, seen: &Mutex<Vec<Request>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).unwrap();
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let body = if body.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&body).unwrap()
    };
    let request = Request { method, path, body };
    let index = {
        let mut log = seen.lock().unwrap();
        log.push(request.clone());
        log.len() - 1
    };
    let (status, reply) = handler(&request, index);
    let payload = reply.to_string();
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

fn descriptor(h: usize) -> Value {
    json!({"id": "fake", "h": h, "max_segments": 64, "max_concurrency": 2, "deterministic": true})
}

fn routes(req: &Request) -> (u16, Value) {
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/descriptor") => (200, descriptor(3)),
        ("POST", "/embed") => (200, json!({"vector": [3.0, 0.0, 4.0]})),
        ("POST", "/generate") => (200, json!({"text": "Product 1:\nSummary: s\nSupport: YES"})),
        _ => (404, json!({})),
    }
}

fn connect(server: &FakeServer) -> BridgeClient {
    BridgeClient::connect(&server.url, Duration::from_secs(5)).unwrap()
}

#[test]
fn descriptor_is_fetched_on_connect() {
    let server = FakeServer::start(|r, _| routes(r));
    let client = BridgeClient::connect(&format!("{}/", server.url), Duration::from_secs(5)).unwrap();
    let d = client.descriptor();
    assert_eq!((d.id.as_str(), d.h, d.max_segments, d.max_concurrency), ("fake", 3, 64, 2));
    assert_eq!(client.base_url(), server.url);
    let reqs = server.requests();
    assert_eq!((reqs[0].method.as_str(), reqs[0].path.as_str()), ("GET", "/descriptor"));
}

#[test]
fn embeddings_are_renormalized() {
    let server = FakeServer::start(|r, _| routes(r));
    let client = connect(&server);
    let v = client.embed_text("hello world").unwrap();
    assert_abs_diff_eq!(v[0], 0.6, epsilon = 1e-7);
    assert_abs_diff_eq!(v[2], 0.8, epsilon = 1e-7);
    assert_abs_diff_eq!(v.dot(&v), 1.0, epsilon = 1e-12);
    let reqs = server.requests();
    assert_eq!(reqs[1].path, "/embed");
    assert_eq!(reqs[1].body, json!({"text": "hello world"}));
}

#[test]
fn generate_sends_segments_in_the_wire_format() {
    let server = FakeServer::start(|r, _| routes(r));
    let client = connect(&server);
    let g = TextAttributedGraph::from_parts(GraphParts {
        name: "pair".into(),
        texts: vec!["a".into(), "b".into()],
        features: Array2::zeros((2, 1)),
        edges: vec![(0, 1)],
        labels: vec![0, 0],
        splits: Splits::default(),
        class_names: vec!["c".into()],
    })
    .unwrap();
    let tree = g.computation_tree(0, 1).unwrap();
    let soft = BTreeMap::from([(0, array![[0.1, 0.2, 0.3]]), (1, array![[1.0, -0.5, 0.25], [0.0, 2.0, 1.0]])]);
    let template = PromptTemplate::builtin("synthetic").unwrap();
    let prompt = build_hybrid_prompt(&g, &tree, &soft, &template, PromptMode::Soft, 0, PromptOptions::default()).unwrap();
    let cfg = GenerationConfig {
        max_tokens: 77,
        stop: vec!["\n\n\n".into()],
        ..GenerationConfig::default()
    };
    let text = client.generate(&prompt, &cfg).unwrap();
    assert_eq!(text, "Product 1:\nSummary: s\nSupport: YES");

    let body = &server.requests()[1].body;
    assert_eq!(body["max_tokens"], 77);
    assert_eq!(body["stop"], json!(["\n\n\n"]));
    let segments = body["segments"].as_array().unwrap();
    assert_eq!(segments.len(), prompt.segments.len());
    let soft_wire: Vec<&Value> = segments.iter().filter(|s| s["kind"] == "soft").collect();
    assert_eq!(soft_wire.len(), 2);
    let as_f32 = |v: &Value| -> Vec<Vec<f32>> { serde_json::from_value(v.clone()).unwrap() };
    assert_eq!(as_f32(&soft_wire[0]["matrix"]), vec![vec![0.1f32, 0.2, 0.3]]);
    assert_eq!(as_f32(&soft_wire[1]["matrix"]), vec![vec![1.0f32, -0.5, 0.25], vec![0.0, 2.0, 1.0]]);
    for s in segments.iter().filter(|s| s["kind"] == "text") {
        assert!(s["content"].is_string());
    }
}

#[test]
fn a_failed_request_is_retried_once() {
    // the first embed call fails, the retry succeeds
    let server = FakeServer::start(|r, i| if i == 1 { (500, json!({})) } else { routes(r) });
    let client = connect(&server);
    assert!(client.embed_text("x").is_ok());
    assert_eq!(server.requests().iter().filter(|r| r.path == "/embed").count(), 2);
}

#[test]
fn two_failures_make_the_backend_unavailable() {
    let server = FakeServer::start(|r, i| if i >= 1 { (503, json!({})) } else { routes(r) });
    let client = connect(&server);
    assert!(matches!(client.embed_text("x"), Err(BackendError::Unavailable(_))));
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn unreachable_server_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = BridgeClient::connect(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)), "{err}");
}

#[test]
fn protocol_violations_are_reported() {
    let server = FakeServer::start(|r, _| match r.path.as_str() {
        "/embed" => (200, json!({"vector": [1.0, 2.0]})),
        _ => routes(r),
    });
    assert!(matches!(connect(&server).embed_text("x"), Err(BackendError::Protocol(_))));

    let zero_h = FakeServer::start(|_, _| (200, descriptor(0)));
    assert!(matches!(
        BridgeClient::connect(&zero_h.url, Duration::from_secs(5)),
        Err(BackendError::Protocol(_))
    ));
}
