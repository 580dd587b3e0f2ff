//! Minimal chat-completion server on a local port for backend tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn ok(content: &str) -> Self {
        let body = json!({
            "choices": [{ "message": { "role": "assistant", "content": content } }],
            "usage": { "prompt_tokens": 11, "completion_tokens": 7 },
        });
        Self { status: 200, headers: Vec::new(), body: body.to_string() }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Self { status, headers: Vec::new(), body: body.into() }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

type Handler = dyn Fn(usize, &Value) -> Reply + Send + Sync;

pub struct FakeServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Value>>>,
}

impl FakeServer {
    /// Serves until the process exits; `handler` gets the 0-based request
    /// number and the parsed JSON body.
    pub fn start(handler: impl Fn(usize, &Value) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind local port");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let seen = Arc::clone(&seen);
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, &seen, handler.as_ref()));
            }
        });
        Self { url, requests }
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, seen: &Mutex<Vec<Value>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let mut length = 0;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        let n = {
            let mut s = seen.lock().unwrap();
            s.push(value.clone());
            s.len() - 1
        };
        let reply = handler(n, &value);
        let mut out = format!(
            "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n",
            reply.status,
            reply.body.len()
        );
        for (k, v) in &reply.headers {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        out.push_str("\r\n");
        out.push_str(&reply.body);
        let mut w = &stream;
        if w.write_all(out.as_bytes()).is_err() {
            return;
        }
    }
}

/// Concatenated user text of a wire request.
pub fn user_text(body: &Value) -> String {
    let mut out = String::new();
    for m in body["messages"].as_array().into_iter().flatten() {
        if m["role"] != "user" {
            continue;
        }
        match &m["content"] {
            Value::String(s) => out.push_str(s),
            Value::Array(parts) => {
                for p in parts {
                    if let Some(t) = p["text"].as_str() {
                        out.push_str(t);
                    }
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Faults {
    /// Segmentation replies with prose instead of JSON.
    pub degenerate_segments: bool,
    /// Narrative replies include a link to a later episode.
    pub forward_link: bool,
}

/// A scripted model that answers each stage prompt in the expected format.
pub fn scripted_model(faults: Faults) -> impl Fn(usize, &Value) -> Reply + Send + Sync + 'static {
    move |_, body| {
        let text = user_text(body);
        let indices: Vec<usize> = text
            .lines()
            .filter_map(|l| l.strip_prefix('[')?.split_once(']')?.0.parse().ok())
            .collect();
        if text.contains("detect event boundaries") {
            if faults.degenerate_segments {
                return Reply::ok("I think the video has several parts.");
            }
            let (first, last) = (indices.first().copied().unwrap_or(1), indices.last().copied().unwrap_or(1));
            let mid = (first + last) / 2;
            let events = if mid > first { json!([[first, mid], [mid + 1, last]]) } else { json!([[first, last]]) };
            return Reply::ok(&json!({ "events": events }).to_string());
        }
        if text.contains("one event-level unit") {
            return Reply::ok(r#"{"summary": "A person works in the kitchen with Bob.", "entities": ["Bob"]}"#);
        }
        if text.contains("narrative role") {
            let n = text.lines().filter(|l| l.starts_with('「')).count().max(1);
            let episodes: Vec<Value> = (0..n)
                .map(|k| {
                    let mut links = Vec::new();
                    if k > 0 {
                        links.push(json!({ "target_id": k - 1, "relation": "precedes" }));
                    }
                    if faults.forward_link && k + 1 < n {
                        links.push(json!({ "target_id": k + 1, "relation": "causes" }));
                    }
                    json!({ "id": k, "narrative_role": if k == 0 { "introduction" } else { "development" }, "causal_links": links })
                })
                .collect();
            return Reply::ok(&json!({ "episodes": episodes }).to_string());
        }
        if text.contains("minimally sufficient") {
            let pick: Vec<usize> = indices.into_iter().take(2).collect();
            return Reply::ok(&format!("```json\n{}\n```", json!({ "lines": pick })));
        }
        if text.contains("Predicted answer") {
            return Reply::ok(r#"{"summary": "The answer came from the first scene."}"#);
        }
        Reply::ok("Answer: (A)\nEvidence: the first scene shows it.")
    }
}
