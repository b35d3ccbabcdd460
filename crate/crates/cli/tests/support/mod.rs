//! Helpers for the acceptance suite: fixture paths, CLI invocation, and a
//! loopback HTTP stub that serves chat completions from a replay script.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use todeval::provider::{prompt_digest, MockScript};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_todeval")
}

/// Run the CLI with the standard fixture resource flags plus `extra`.
pub fn run_cli(extra: &[&str], envs: &[(&str, &str)]) -> Output {
    let f = fixtures();
    let mut cmd = Command::new(bin());
    cmd.arg("run")
        .arg("--split")
        .arg(f.join("turns.ndjson"))
        .arg("--ontology-dir")
        .arg(f.join("ontology"))
        .arg("--banks-dir")
        .arg(f.join("banks"))
        .args(extra);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("CLI runs")
}

pub fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// HTTP stub
// ---------------------------------------------------------------------------

pub struct HttpStub {
    pub addr: SocketAddr,
    hits: Arc<AtomicU64>,
}

impl HttpStub {
    /// Serve OpenAI-style chat completions on a loopback port, answering
    /// from the script by prompt digest. Connections are thread-per-request
    /// with `Connection: close`.
    pub fn start(script: MockScript) -> HttpStub {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicU64::new(0));
        let entries = Arc::new(script.entries);
        let hits_clone = Arc::clone(&hits);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let entries = Arc::clone(&entries);
                let hits = Arc::clone(&hits_clone);
                std::thread::spawn(move || serve_one(stream, &entries, &hits));
            }
        });
        HttpStub { addr, hits }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve_one(
    mut stream: TcpStream,
    entries: &std::collections::HashMap<String, String>,
    hits: &AtomicU64,
) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_header_end(&buf) {
                    break pos;
                }
            }
            Err(_) => return,
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())
                .flatten()
        })
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => return,
        }
    }
    let body = &buf[body_start..body_start + content_length.min(buf.len() - body_start)];

    hits.fetch_add(1, Ordering::SeqCst);
    let (status, payload) = match respond(body, entries) {
        Some(content) => (
            "200 OK",
            serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                .to_string(),
        ),
        None => ("404 Not Found", r#"{"error": "no scripted response"}"#.to_string()),
    };
    let response = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.write_all(response.as_bytes());
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn respond(body: &[u8], entries: &std::collections::HashMap<String, String>) -> Option<String> {
    let parsed: serde_json::Value = serde_json::from_slice(body).ok()?;
    let prompt = parsed.get("messages")?.get(0)?.get("content")?.as_str()?;
    entries.get(&prompt_digest(prompt)).cloned()
}
