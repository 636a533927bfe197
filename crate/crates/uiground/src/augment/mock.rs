//! Minimal in-process HTTP server used to test the annotation client and
//! the remote prediction backend without a real model endpoint.
//!
//! Serves a chat-completions route and a `/predict` route with scriptable
//! failures and delays, and logs every request with its arrival time so
//! tests can check caching and measured request rates.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct RequestLog {
    pub path: String,
    pub body: String,
    pub at: Instant,
}

#[derive(Debug)]
struct MockState {
    log: Vec<RequestLog>,
    chat_text: String,
    predict_body: String,
    fail_remaining: usize,
    fail_status: u16,
    delay: Duration,
}

pub struct MockServer {
    addr: SocketAddr,
    state: Arc<Mutex<MockState>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Bind an ephemeral local port and serve until dropped. `chat_text` is
    /// the assistant message returned from the chat-completions route.
    pub fn start(chat_text: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let state = Arc::new(Mutex::new(MockState {
            log: Vec::new(),
            chat_text: chat_text.to_owned(),
            predict_body: r#"{"point":[0.5,0.5]}"#.to_owned(),
            fail_remaining: 0,
            fail_status: 500,
            delay: Duration::ZERO,
        }));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = stream {
                        let _ = handle_connection(stream, &state);
                    }
                }
            })
        };
        Ok(Self {
            addr,
            state,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().unwrap().log.len()
    }

    pub fn request_times(&self) -> Vec<Instant> {
        self.state.lock().unwrap().log.iter().map(|r| r.at).collect()
    }

    pub fn requests(&self) -> Vec<RequestLog> {
        self.state.lock().unwrap().log.clone()
    }

    /// Fail the next `n` requests with the given HTTP status.
    pub fn fail_next(&self, n: usize, status: u16) {
        let mut s = self.state.lock().unwrap();
        s.fail_remaining = n;
        s.fail_status = status;
    }

    /// Delay every response, for latency measurements.
    pub fn set_delay(&self, delay: Duration) {
        self.state.lock().unwrap().delay = delay;
    }

    pub fn set_chat_text(&self, text: &str) {
        self.state.lock().unwrap().chat_text = text.to_owned();
    }

    /// Raw JSON body the `/predict` route answers with.
    pub fn set_predict_body(&self, json: &str) {
        self.state.lock().unwrap().predict_body = json.to_owned();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(stream: TcpStream, state: &Arc<Mutex<MockState>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_owned();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
        {
            content_length = v.parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();

    let (response_body, status, delay) = {
        let mut s = state.lock().unwrap();
        s.log.push(RequestLog {
            path: path.clone(),
            body,
            at: Instant::now(),
        });
        if s.fail_remaining > 0 {
            s.fail_remaining -= 1;
            (r#"{"error":"injected failure"}"#.to_owned(), s.fail_status, s.delay)
        } else if path.contains("/predict") {
            (s.predict_body.clone(), 200, s.delay)
        } else if path.contains("/chat/completions") {
            let payload = serde_json::json!({
                "choices": [{ "message": { "role": "assistant", "content": s.chat_text } }]
            });
            (payload.to_string(), 200, s.delay)
        } else {
            (r#"{"error":"no such route"}"#.to_owned(), 404, s.delay)
        }
    };
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }

    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        _ => "Error",
    };
    let mut stream = reader.into_inner();
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response_body.len(),
        response_body
    )?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_chat_and_predict_routes() {
        let server = MockServer::start("a caption").unwrap();
        let client = reqwest::blocking::Client::new();

        let resp: serde_json::Value = client
            .post(format!("{}/v1/chat/completions", server.url()))
            .json(&serde_json::json!({"model": "m", "messages": []}))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert_eq!(resp["choices"][0]["message"]["content"], "a caption");

        let resp: serde_json::Value = client
            .post(format!("{}/predict", server.url()))
            .json(&serde_json::json!({"image_b64": "", "command": "x"}))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert_eq!(resp["point"][0], 0.5);
        assert_eq!(server.request_count(), 2);
    }

    #[test]
    fn injected_failures_then_recovery() {
        let server = MockServer::start("ok").unwrap();
        server.fail_next(2, 500);
        let client = reqwest::blocking::Client::new();
        let url = format!("{}/v1/chat/completions", server.url());
        assert_eq!(client.post(&url).body("{}").send().unwrap().status(), 500);
        assert_eq!(client.post(&url).body("{}").send().unwrap().status(), 500);
        assert_eq!(client.post(&url).body("{}").send().unwrap().status(), 200);
    }
}
