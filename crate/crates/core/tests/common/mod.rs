//! Shared fixtures for the integration tests: a local embeddings stub server
//! and small file helpers.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

/// What the stub sends back for one request: status code and JSON body.
pub type Reply = (u16, Value);

/// One received request.
#[derive(Debug, Clone)]
pub struct Seen {
    pub auth: Option<String>,
    pub body: Value,
}

pub struct StubServer {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    pub url: String,
    pub requests: Arc<Mutex<Vec<Seen>>>,
}

impl StubServer {
    /// Serves `reply(request_number, body)` for each POST, numbering from 0.
    pub fn start<F>(reply: F) -> Self
    where
        F: Fn(usize, &Value) -> Reply + Send + Sync + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let counter = AtomicUsize::new(0);
        let (srv, seen) = (server.clone(), requests.clone());
        let reply = Arc::new(reply);
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut text = String::new();
                req.as_reader().read_to_string(&mut text).unwrap();
                let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
                let auth = req
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.to_string());
                seen.lock().unwrap().push(Seen {
                    auth,
                    body: body.clone(),
                });
                let k = counter.fetch_add(1, Ordering::SeqCst);
                let (status, out) = reply(k, &body);
                let resp = tiny_http::Response::from_string(out.to_string())
                    .with_status_code(status)
                    .with_header(
                        "Content-Type: application/json"
                            .parse::<tiny_http::Header>()
                            .unwrap(),
                    );
                let _ = req.respond(resp);
            }
        });
        StubServer {
            server,
            handle: Some(handle),
            url: format!("http://127.0.0.1:{port}/v1/embeddings"),
            requests,
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Text index carried by inputs of the form `t<i>`.
pub fn text_index(s: &str) -> usize {
    s.trim_start_matches('t').parse().unwrap()
}

/// Deterministic `dim`-vector whose second/first component ratio encodes `i`.
pub fn vector_for(i: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    if dim > 1 {
        v[1] = i as f64;
    }
    for (d, x) in v.iter_mut().enumerate().skip(2) {
        *x = ((i * 7 + d * 3) % 11) as f64 / 10.0;
    }
    v
}

/// Successful response embedding every `t<i>` input of `body`.
pub fn ok_reply(body: &Value, dim: usize) -> Reply {
    let data: Vec<Value> = body["input"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| json!({ "embedding": vector_for(text_index(t.as_str().unwrap()), dim) }))
        .collect();
    (200, json!({ "data": data }))
}

pub fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

pub fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}
