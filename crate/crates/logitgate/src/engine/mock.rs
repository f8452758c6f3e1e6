//! Minimal OpenAI-shaped HTTP server for tests and examples.
//!
//! Serves a completion route backed by a [`ToyModelSpec`] and a chat route
//! with scriptable replies (for classifier tests). Every request is logged
//! so tests can assert protocol properties: one request per emitted token,
//! bias maps equal to the trigger engine's masks, and so on.
//!
//! Sessions are tracked by prompt prefix: a request whose prompt extends a
//! previously served context resumes that walk, anything else starts a new
//! walk from the start state. No tokenizer is needed on the server side.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::toy::{toy_next_logits, ToyModelSpec};
use crate::error::Result;
use crate::sampler::{sample, SuppressionMask};
use crate::types::{SamplerConfig, TokenId};

/// One request as the server saw it.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub path: String,
    pub body: serde_json::Value,
    pub authorization: Option<String>,
}

impl RecordedRequest {
    /// The request's `logit_bias` map, if present.
    pub fn logit_bias(&self) -> Option<std::collections::BTreeMap<String, f64>> {
        self.body
            .get("logit_bias")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }
}

struct Inner {
    spec: ToyModelSpec,
    sessions: Mutex<HashMap<String, (String, Vec<TokenId>)>>,
    log: Mutex<Vec<RecordedRequest>>,
    chat_queue: Mutex<VecDeque<String>>,
    chat_default: Mutex<String>,
    fail_next: Mutex<usize>,
    reject_bias: AtomicBool,
    shutdown: AtomicBool,
    static_routes: Mutex<HashMap<String, Vec<u8>>>,
}

/// Handle to a running mock server. Shuts down on drop.
pub struct MockServer {
    addr: SocketAddr,
    inner: Arc<Inner>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts a server backed by the given toy model.
    pub fn start(spec: ToyModelSpec) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let inner = Arc::new(Inner {
            spec,
            sessions: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            chat_queue: Mutex::new(VecDeque::new()),
            chat_default: Mutex::new("answered".to_string()),
            fail_next: Mutex::new(0),
            reject_bias: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            static_routes: Mutex::new(HashMap::new()),
        });
        let server_inner = Arc::clone(&inner);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if server_inner.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_inner = Arc::clone(&server_inner);
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &conn_inner);
                });
            }
        });
        Ok(MockServer {
            addr,
            inner,
            handle: Some(handle),
        })
    }

    /// Base URL, e.g. `http://127.0.0.1:49152`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// All requests served so far, in arrival order.
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.inner.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.inner.log.lock().unwrap().len()
    }

    /// Makes the next `n` requests fail with HTTP 500.
    pub fn fail_next(&self, n: usize) {
        *self.inner.fail_next.lock().unwrap() = n;
    }

    /// Rejects any request carrying `logit_bias` with HTTP 400, emulating a
    /// server without bias support.
    pub fn reject_bias(&self, reject: bool) {
        self.inner.reject_bias.store(reject, Ordering::SeqCst);
    }

    /// Queues a scripted chat-completion reply; once the queue is empty the
    /// default reply is served.
    pub fn push_chat_response(&self, content: impl Into<String>) {
        self.inner
            .chat_queue
            .lock()
            .unwrap()
            .push_back(content.into());
    }

    pub fn set_chat_default(&self, content: impl Into<String>) {
        *self.inner.chat_default.lock().unwrap() = content.into();
    }

    /// Serves fixed bytes for GET requests to `path` (used to exercise
    /// dataset downloads against a local server).
    pub fn serve_static(&self, path: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.inner
            .static_routes
            .lock()
            .unwrap()
            .insert(path.into(), bytes.into());
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, inner: &Inner) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();

    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "content-length" {
                content_length = value.parse().unwrap_or(0);
            } else if name == "authorization" {
                authorization = Some(value.to_string());
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    if method == "GET" {
        let routes = inner.static_routes.lock().unwrap();
        return match routes.get(&path) {
            Some(bytes) => write_raw_response(&mut stream, 200, bytes),
            None => write_response(&mut stream, 404, &serde_json::json!({"error": "not found"})),
        };
    }
    if method != "POST" {
        return write_response(&mut stream, 404, &serde_json::json!({"error": "not found"}));
    }
    let Ok(body_json) = serde_json::from_slice::<serde_json::Value>(&body) else {
        return write_response(&mut stream, 400, &serde_json::json!({"error": "bad json"}));
    };

    inner.log.lock().unwrap().push(RecordedRequest {
        path: path.clone(),
        body: body_json.clone(),
        authorization,
    });

    {
        let mut fail = inner.fail_next.lock().unwrap();
        if *fail > 0 {
            *fail -= 1;
            return write_response(
                &mut stream,
                500,
                &serde_json::json!({"error": "injected failure"}),
            );
        }
    }

    match path.as_str() {
        "/v1/completions" => {
            let status_body = serve_completion(inner, &body_json);
            write_response(&mut stream, status_body.0, &status_body.1)
        }
        "/v1/chat/completions" => {
            let content = inner
                .chat_queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| inner.chat_default.lock().unwrap().clone());
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": content},
                             "finish_reason": "stop"}]
            });
            write_response(&mut stream, 200, &body)
        }
        _ => write_response(
            &mut stream,
            404,
            &serde_json::json!({"error": "no such route"}),
        ),
    }
}

fn serve_completion(inner: &Inner, body: &serde_json::Value) -> (u16, serde_json::Value) {
    let prompt = body.get("prompt").and_then(|v| v.as_str()).unwrap_or("");
    let temperature = body
        .get("temperature")
        .and_then(|v| v.as_f64())
        .unwrap_or(1.0);
    let top_p = body.get("top_p").and_then(|v| v.as_f64()).unwrap_or(1.0);
    let repetition_penalty = body
        .get("repetition_penalty")
        .and_then(|v| v.as_f64())
        .unwrap_or(1.0);
    let seed = body.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);

    let mut mask = SuppressionMask::empty();
    if let Some(bias) = body.get("logit_bias") {
        if inner.reject_bias.load(Ordering::SeqCst) {
            return (
                400,
                serde_json::json!({"error": "logit_bias is not supported by this model"}),
            );
        }
        let Some(entries) = bias.as_object() else {
            return (
                400,
                serde_json::json!({"error": "logit_bias must be an object"}),
            );
        };
        for (key, value) in entries {
            let (Ok(id), Some(penalty)) = (key.parse::<u32>(), value.as_f64()) else {
                return (
                    400,
                    serde_json::json!({"error": "malformed logit_bias entry"}),
                );
            };
            if mask.insert(TokenId(id), penalty).is_err() {
                return (
                    400,
                    serde_json::json!({"error": "positive bias not supported"}),
                );
            }
        }
    }

    let Ok(config) = SamplerConfig::new(temperature, top_p, repetition_penalty, seed) else {
        return (
            400,
            serde_json::json!({"error": "invalid sampler parameters"}),
        );
    };

    let mut sessions = inner.sessions.lock().unwrap();
    let (state, history) = sessions
        .get(prompt)
        .cloned()
        .unwrap_or_else(|| (inner.spec.start_state.clone(), Vec::new()));

    let logits = match toy_next_logits(&inner.spec, &state) {
        Ok(l) => l,
        Err(e) => return (500, serde_json::json!({"error": e.to_string()})),
    };
    // Derive a fresh rng per step so stateless HTTP still samples
    // deterministically for a given (seed, depth).
    let step_seed = seed ^ (history.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    let token = match sample(&logits, &config, &history, &mask, &mut rng) {
        Ok(t) => t,
        Err(e) => return (400, serde_json::json!({"error": e.to_string()})),
    };

    let next_state = inner
        .spec
        .transitions
        .get(&state)
        .and_then(|v| v.iter().find(|t| t.token == token))
        .map(|t| t.next.clone())
        .unwrap_or_else(|| state.clone());
    let text = inner.spec.token_text(token).unwrap_or_default().to_string();
    let is_eos = token == inner.spec.specials.eos;

    let mut new_history = history;
    new_history.push(token);
    sessions.insert(format!("{prompt}{text}"), (next_state, new_history));

    let choice = serde_json::json!({
        "text": if is_eos { "" } else { text.as_str() },
        "finish_reason": if is_eos { "stop" } else { "length" },
        "token_id": token.0,
    });
    (200, serde_json::json!({"choices": [choice]}))
}

fn write_raw_response(stream: &mut TcpStream, status: u16, body: &[u8]) -> std::io::Result<()> {
    let reason = if status == 200 { "OK" } else { "Not Found" };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/octet-stream\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(body)?;
    stream.flush()
}

fn write_response(
    stream: &mut TcpStream,
    status: u16,
    body: &serde_json::Value,
) -> std::io::Result<()> {
    let payload = serde_json::to_vec(body)?;
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        _ => "Internal Server Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        payload.len()
    )?;
    stream.write_all(&payload)?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eos_step_reports_stop_with_empty_text() {
        let spec = ToyModelSpec::canonical();
        let inner = Inner {
            spec,
            sessions: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            chat_queue: Mutex::new(VecDeque::new()),
            chat_default: Mutex::new(String::new()),
            fail_next: Mutex::new(0),
            reject_bias: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            static_routes: Mutex::new(HashMap::new()),
        };
        // Walk three deterministic refusal steps by pre-seeding the session
        // table at the state right before EOS.
        inner.sessions.lock().unwrap().insert(
            "ctx".to_string(),
            ("refusal-finish".to_string(), vec![TokenId(0)]),
        );
        let (status, body) = serve_completion(
            &inner,
            &serde_json::json!({"prompt": "ctx", "temperature": 1.0, "top_p": 1.0, "seed": 0}),
        );
        assert_eq!(status, 200);
        let choice = &body["choices"][0];
        assert_eq!(choice["finish_reason"], "stop");
        assert_eq!(choice["text"], "");
        assert_eq!(choice["token_id"], 3);
    }

    #[test]
    fn positive_bias_is_rejected() {
        let inner = Inner {
            spec: ToyModelSpec::canonical(),
            sessions: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            chat_queue: Mutex::new(VecDeque::new()),
            chat_default: Mutex::new(String::new()),
            fail_next: Mutex::new(0),
            reject_bias: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            static_routes: Mutex::new(HashMap::new()),
        };
        let (status, _) = serve_completion(
            &inner,
            &serde_json::json!({"prompt": "", "logit_bias": {"1": 50.0}}),
        );
        assert_eq!(status, 400);
    }
}
