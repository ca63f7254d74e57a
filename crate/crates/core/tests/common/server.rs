//! Minimal blocking HTTP/1.1 server standing in for the detection service.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use mvtrack::detect::{Detections, WireDetection};
use serde_json::Value;

pub type Handler = dyn Fn(&Value) -> (u16, String) + Send + Sync;

pub struct MockService {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

impl MockService {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

pub fn spawn(handler: impl Fn(&Value) -> (u16, String) + Send + Sync + 'static) -> MockService {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let url = format!("http://{}/detect", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::new(handler);
    let counter = Arc::clone(&hits);
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let (handler, counter) = (Arc::clone(&handler), Arc::clone(&counter));
            std::thread::spawn(move || serve(stream, &*handler, &counter));
        }
    });
    MockService { url, hits }
}

fn serve(stream: TcpStream, handler: &Handler, hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
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
    hits.fetch_add(1, Ordering::SeqCst);
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (code, payload) = handler(&request);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {code} STATUS\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

/// Handler serving `dets` for `sequence`: 404 for other sequences and 422
/// for frames past `frames`.
pub fn fixture_handler(sequence: &str, frames: u32, dets: Detections) -> impl Fn(&Value) -> (u16, String) + Send + Sync + 'static {
    let sequence = sequence.to_string();
    move |req| {
        if req["sequence"].as_str() != Some(sequence.as_str()) {
            return (404, "{\"error\":\"unknown sequence\"}".into());
        }
        match req["frame"].as_u64() {
            Some(t) if t >= 1 && t <= frames as u64 => {
                let wire: Vec<WireDetection> = dets.frame(t as u32).iter().map(WireDetection::from_detection).collect();
                (200, serde_json::to_string(&wire).unwrap())
            }
            _ => (422, "{\"error\":\"frame unavailable\"}".into()),
        }
    }
}
