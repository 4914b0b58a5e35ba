//! Loopback chat-completions server for tests and examples.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

/// What the server answers to one request: an HTTP status and, on 200, the
/// assistant text.
pub type Handler = dyn Fn(&MockRequest) -> (u16, String) + Send + Sync;

#[derive(Clone, Debug)]
pub struct MockRequest {
    /// 1-based arrival number.
    pub seq: usize,
    pub prompt: String,
    pub image_url: String,
    pub body: Value,
    pub authorization: Option<String>,
}

#[derive(Default)]
struct Probe {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    log: Mutex<Vec<MockRequest>>,
}

struct Shared {
    handler: Box<Handler>,
    delay: Duration,
    probe: Probe,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

/// Deterministic well-formed reply: the option listed in the prompt's
/// response-format line, picked by hashing the prompt and image.
pub fn canned_reply(request: &MockRequest) -> String {
    let format_line = request
        .prompt
        .lines()
        .skip_while(|l| !l.trim_start().starts_with("## Response Format"))
        .nth(1)
        .unwrap_or("");
    let Some((key, options)) = format_line.split_once(':') else {
        return "I cannot tell.".to_string();
    };
    let options: Vec<&str> = options.split('/').map(str::trim).collect();
    let digest = Sha256::new()
        .chain_update(request.prompt.as_bytes())
        .chain_update(request.image_url.as_bytes())
        .finalize();
    let pick = digest[0] as usize % options.len();
    format!("{}: {}", key.trim(), options[pick])
}

impl MockServer {
    /// Serves [`canned_reply`] with no delay.
    pub fn start_canned() -> std::io::Result<Self> {
        MockServer::start(|r| (200, canned_reply(r)), Duration::ZERO)
    }

    pub fn start<F>(handler: F, delay: Duration) -> std::io::Result<Self>
    where
        F: Fn(&MockRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let shared = Arc::new(Shared {
            handler: Box::new(handler),
            delay,
            probe: Probe::default(),
        });
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let state = shared.clone();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let app = Router::new()
                    .route("/chat/completions", post(completions))
                    .route("/v1/chat/completions", post(completions))
                    .with_state(state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("mock server");
            });
        });
        Ok(MockServer {
            addr,
            shared,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.probe.requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests being handled at the same time.
    pub fn max_in_flight(&self) -> usize {
        self.shared.probe.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn log(&self) -> Vec<MockRequest> {
        self.shared.probe.log.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn completions(
    State(shared): State<Arc<Shared>>,
    headers: axum::http::HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    let probe = &shared.probe;
    let seq = probe.requests.fetch_add(1, Ordering::SeqCst) + 1;
    let now = probe.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    probe.max_in_flight.fetch_max(now, Ordering::SeqCst);

    let content = body.pointer("/messages/0/content").and_then(Value::as_array);
    let part = |kind: &str| {
        content
            .and_then(|parts| parts.iter().find(|p| p["type"] == kind))
            .cloned()
            .unwrap_or(Value::Null)
    };
    let request = MockRequest {
        seq,
        prompt: part("text")["text"].as_str().unwrap_or_default().to_string(),
        image_url: part("image_url")["image_url"]["url"].as_str().unwrap_or_default().to_string(),
        body: body.clone(),
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    };
    if !shared.delay.is_zero() {
        tokio::time::sleep(shared.delay).await;
    }
    let (status, text) = (shared.handler)(&request);
    probe.log.lock().unwrap().push(request);
    probe.in_flight.fetch_sub(1, Ordering::SeqCst);

    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if status.is_success() {
        Json(json!({
            "id": format!("mock-{seq}"),
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        }))
        .into_response()
    } else {
        (status, Json(json!({"error": {"message": text}}))).into_response()
    }
}
