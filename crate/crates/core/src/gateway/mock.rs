//! Scripted chat-completions mock server.
//!
//! Replies come from a JSONL fixture: entries with a `match` fingerprint
//! form per-fingerprint FIFO queues (consumed in order, so retries and
//! re-asks can be scripted), entries with `match: null` form a global
//! FIFO fallback. A request with no remaining entry gets a 404 with a
//! diagnostic body. Every served interaction lands in an in-memory
//! transcript that can be written out as JSONL.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::http::{read_request, write_response};
use super::{request_fingerprint, ChatMessage};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(rename = "match")]
    pub match_fingerprint: Option<String>,
    pub reply: String,
    #[serde(default = "default_status")]
    pub status: u16,
}

fn default_status() -> u16 {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: String,
    /// Raw request body bytes as received, for byte-exact replay.
    pub body: String,
    pub status: u16,
    pub reply: String,
    /// Concurrent requests in service when this one was handled.
    pub in_flight: usize,
}

struct FixtureState {
    by_fingerprint: HashMap<String, VecDeque<FixtureEntry>>,
    sequence: VecDeque<FixtureEntry>,
}

impl FixtureState {
    fn next_for(&mut self, fingerprint: &str) -> Option<FixtureEntry> {
        if let Some(queue) = self.by_fingerprint.get_mut(fingerprint) {
            if let Some(entry) = queue.pop_front() {
                return Some(entry);
            }
        }
        self.sequence.pop_front()
    }
}

#[derive(Deserialize)]
struct InboundRequest {
    messages: Vec<ChatMessage>,
}

struct Shared {
    fixtures: Mutex<FixtureState>,
    transcript: Mutex<Vec<TranscriptEntry>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    shutdown: AtomicBool,
}

pub struct MockServer {
    port: u16,
    shared: Arc<Shared>,
    accept_thread: Option<JoinHandle<()>>,
}

fn load_fixture(path: impl AsRef<Path>) -> io::Result<Vec<FixtureEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("fixture line {}: {e}", i + 1),
            )
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) {
    let current = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak_in_flight.fetch_max(current, Ordering::SeqCst);

    let outcome = (|| -> io::Result<()> {
        let req = read_request(&mut stream)?;
        if req.method != "POST" || !req.path.ends_with("/chat/completions") {
            return write_response(
                &mut stream,
                404,
                br#"{"error":"only POST /chat/completions is served"}"#,
            );
        }
        let body_text = String::from_utf8_lossy(&req.body).to_string();
        let fingerprint = match serde_json::from_slice::<InboundRequest>(&req.body) {
            Ok(inbound) => request_fingerprint(&inbound.messages),
            Err(e) => {
                return write_response(
                    &mut stream,
                    404,
                    format!(r#"{{"error":"unparseable request body: {e}"}}"#).as_bytes(),
                );
            }
        };

        let entry = shared.fixtures.lock().unwrap().next_for(&fingerprint);
        let (status, reply_body, reply_text) = match entry {
            Some(entry) => {
                let payload = serde_json::json!({
                    "id": "mock",
                    "object": "chat.completion",
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": entry.reply},
                        "finish_reason": "stop"
                    }]
                });
                (entry.status, payload.to_string(), entry.reply)
            }
            None => {
                let diag = format!(
                    r#"{{"error":"no fixture entry for fingerprint {fingerprint} and the sequence is empty"}}"#
                );
                (404, diag, String::new())
            }
        };

        shared.transcript.lock().unwrap().push(TranscriptEntry {
            fingerprint,
            body: body_text,
            status,
            reply: reply_text,
            in_flight: current,
        });
        write_response(&mut stream, status, reply_body.as_bytes())
    })();
    if let Err(e) = outcome {
        eprintln!("mock: connection error: {e}");
    }
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
}

/// Boots the mock on 127.0.0.1 (port 0 picks an ephemeral one).
pub fn run_mock(fixture_path: impl AsRef<Path>, port: u16) -> io::Result<MockServer> {
    let entries = load_fixture(fixture_path)?;
    let mut by_fingerprint: HashMap<String, VecDeque<FixtureEntry>> = HashMap::new();
    let mut sequence = VecDeque::new();
    for entry in entries {
        match entry.match_fingerprint.clone() {
            Some(fp) => by_fingerprint.entry(fp).or_default().push_back(entry),
            None => sequence.push_back(entry),
        }
    }

    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let port = listener.local_addr()?.port();
    let shared = Arc::new(Shared {
        fixtures: Mutex::new(FixtureState {
            by_fingerprint,
            sequence,
        }),
        transcript: Mutex::new(Vec::new()),
        in_flight: AtomicUsize::new(0),
        peak_in_flight: AtomicUsize::new(0),
        shutdown: AtomicBool::new(false),
    });

    let accept_shared = shared.clone();
    let accept_thread = std::thread::spawn(move || {
        let mut handlers: Vec<JoinHandle<()>> = Vec::new();
        for stream in listener.incoming() {
            if accept_shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(stream) => {
                    let conn_shared = accept_shared.clone();
                    handlers.push(std::thread::spawn(move || {
                        handle_connection(stream, &conn_shared);
                    }));
                }
                Err(e) => {
                    eprintln!("mock: accept error: {e}");
                    break;
                }
            }
        }
        for h in handlers {
            let _ = h.join();
        }
    });

    Ok(MockServer {
        port,
        shared,
        accept_thread: Some(accept_thread),
    })
}

impl MockServer {
    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Highest number of simultaneously served requests so far.
    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.shared.transcript.lock().unwrap().clone()
    }

    pub fn save_transcript(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for entry in self.transcript() {
            serde_json::to_writer(&mut out, &entry)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // Unblock accept() with a throwaway connection.
        let _ = TcpStream::connect(("127.0.0.1", self.port));
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}
