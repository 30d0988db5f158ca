//! Minimal chat-completions fixture server on a std TcpListener.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

/// What the fixture sends back for one request.
pub enum Reply {
    /// 200 with `content` as the assistant message.
    Content(String),
    Status(u16, String),
    /// Sleep, then close without answering.
    Stall(Duration),
}

#[derive(Debug, Clone)]
pub struct Request {
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

pub struct Fixture {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Request>>>,
    hits: Arc<AtomicUsize>,
}

impl Fixture {
    /// Serves until the process exits. `respond` gets the request and its
    /// zero-based index.
    pub fn start<F>(respond: F) -> Fixture
    where
        F: Fn(&Request, usize) -> Reply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let respond = Arc::new(respond);
        {
            let requests = Arc::clone(&requests);
            let hits = Arc::clone(&hits);
            thread::spawn(move || {
                for stream in listener.incoming().flatten() {
                    let requests = Arc::clone(&requests);
                    let hits = Arc::clone(&hits);
                    let respond = Arc::clone(&respond);
                    thread::spawn(move || {
                        let _ = handle(stream, &requests, &hits, respond.as_ref());
                    });
                }
            });
        }
        Fixture {
            url,
            requests,
            hits,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn handle(
    stream: TcpStream,
    requests: &Mutex<Vec<Request>>,
    hits: &AtomicUsize,
    respond: &(dyn Fn(&Request, usize) -> Reply + Send + Sync),
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut authorization = None;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let v = v.trim().to_string();
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = v.parse().unwrap_or(0),
                "authorization" => authorization = Some(v),
                _ => {}
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    let req = Request {
        authorization,
        body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
    };
    let index = hits.fetch_add(1, Ordering::SeqCst);
    let reply = respond(&req, index);
    requests.lock().unwrap().push(req);
    let (status, payload) = match reply {
        Reply::Content(text) => (
            200,
            serde_json::json!({
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
            })
            .to_string(),
        ),
        Reply::Status(code, text) => (code, text),
        Reply::Stall(d) => {
            thread::sleep(d);
            return Ok(());
        }
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

/// Text of the last user message in a chat request.
pub fn last_user_text(body: &serde_json::Value) -> String {
    let Some(messages) = body["messages"].as_array() else {
        return String::new();
    };
    let Some(m) = messages.iter().rev().find(|m| m["role"] == "user") else {
        return String::new();
    };
    match &m["content"] {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}
