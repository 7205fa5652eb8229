//! A scripted stand-in for the generation service, speaking just enough
//! HTTP/1.1 for one request per connection.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

pub type Handler = dyn Fn(&Value, usize) -> (u16, String) + Send + Sync;

pub struct MockService {
    pub url: String,
    requests: Arc<Mutex<Vec<Value>>>,
}

impl MockService {
    /// `handler` receives each request body and its 0-based arrival index.
    pub fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                serve(stream, &*handler, &log);
            }
        });
        MockService { url, requests }
    }

    /// Follows the wire contract: 404 for models other than `qg`/`ag`, 422
    /// for an empty source, otherwise an echo of the source capped at
    /// `max_tokens`.
    pub fn faithful() -> Self {
        MockService::start(Box::new(|body, _| contract_reply(body)))
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

pub fn contract_reply(body: &Value) -> (u16, String) {
    let model = body["model_id"].as_str().unwrap_or("");
    let source = body["source"].as_str().unwrap_or("");
    let cap = body["max_tokens"].as_u64().unwrap_or(0) as usize;
    if model != "qg" && model != "ag" {
        return (404, json!({"error": "unknown model"}).to_string());
    }
    if source.trim().is_empty() {
        return (422, json!({"error": "empty source"}).to_string());
    }
    let prefix = if body["mode"] == "question" { "what is" } else { "it is" };
    let text: Vec<&str> = std::iter::once(prefix)
        .chain(source.split_whitespace())
        .take(cap)
        .collect();
    (200, json!({ "text": text.join(" ") }).to_string())
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Value>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let index = {
        let mut log = log.lock().unwrap();
        log.push(body.clone());
        log.len() - 1
    };
    let (status, payload) = handler(&body, index);
    let response = format!(
        "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// An address nothing listens on.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}
