//! Scripted-server tests for the chat-completions client: retry policy,
//! fast-fail classification, and the blocking-time bound.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use lga::text::{fetch_descriptions, LlmConfig, TextError};

const EXAMPLE_REPLY: &str = r#"{"Action Label": "Jumping into poo", "sub-action description": ["A photo of a person stands at the edge of a pool, preparing to jump in.", "A photo of a person leaps off the edge, mid-air over the pool.", "A photo of a person enters the water, creating a splash as they dive in."]}"#;

enum Scripted {
    Reply { status: u16, body: String },
    /// Accept and read the request, then hold the connection open without
    /// answering until past the client's timeout.
    Stall { hold: Duration },
}

fn ok(content: &str) -> Scripted {
    Scripted::Reply {
        status: 200,
        body: serde_json::json!({"choices": [{"message": {"content": content}}]}).to_string(),
    }
}

fn status(code: u16, body: &str) -> Scripted {
    Scripted::Reply { status: code, body: body.to_string() }
}

/// Reads one HTTP request: headers, then a `Content-Length` body.
fn read_http_request(stream: &mut TcpStream) {
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut data = Vec::new();
    let mut buf = [0u8; 1024];
    let header_end = loop {
        match stream.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => data.extend_from_slice(&buf[..n]),
            Err(_) => return,
        }
        if let Some(pos) = data.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
    };
    let headers = String::from_utf8_lossy(&data[..header_end]).to_ascii_lowercase();
    let content_length = headers
        .lines()
        .find_map(|l| l.strip_prefix("content-length:"))
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    while data.len() < header_end + content_length {
        match stream.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => data.extend_from_slice(&buf[..n]),
        }
    }
}

struct MockServer {
    endpoint: String,
    requests: Arc<AtomicUsize>,
    handle: Option<thread::JoinHandle<()>>,
}

impl MockServer {
    fn start(script: Vec<Scripted>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&requests);
        let handle = thread::spawn(move || {
            let mut stalls = Vec::new();
            for item in script {
                let Ok((mut stream, _)) = listener.accept() else { break };
                read_http_request(&mut stream);
                counter.fetch_add(1, Ordering::SeqCst);
                match item {
                    Scripted::Reply { status, body } => {
                        let response = format!(
                            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\n\
                             Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                            body.len()
                        );
                        let _ = stream.write_all(response.as_bytes());
                        let _ = stream.flush();
                    }
                    // Park the open socket on its own thread so the accept
                    // loop stays responsive for the client's retry.
                    Scripted::Stall { hold } => stalls.push(thread::spawn(move || {
                        thread::sleep(hold);
                        drop(stream);
                    })),
                }
            }
            for stall in stalls {
                let _ = stall.join();
            }
        });
        Self { endpoint, requests, handle: Some(handle) }
    }

    fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn finish(mut self) -> usize {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
        self.requests()
    }
}

fn config(endpoint: &str, timeout_ms: u64, max_retries: u32, backoff_ms: u64) -> LlmConfig {
    LlmConfig {
        endpoint: endpoint.to_string(),
        api_key: "test-key".into(),
        model: "test-model".into(),
        timeout: Duration::from_millis(timeout_ms),
        max_retries,
        backoff: Duration::from_millis(backoff_ms),
    }
}

#[test]
fn canned_reply_parses_with_no_retries() {
    let server = MockServer::start(vec![ok(EXAMPLE_REPLY)]);
    let outcome =
        fetch_descriptions(&config(&server.endpoint, 2000, 3, 10), "jumping into pool", 3).unwrap();
    assert_eq!(outcome.retries, 0);
    assert_eq!(outcome.descriptions.label, "Jumping into poo");
    assert_eq!(outcome.descriptions.phases(), 3);
    assert_eq!(server.finish(), 1);
}

#[test]
fn unauthorized_fails_fast_without_retrying() {
    let server = MockServer::start(vec![status(401, r#"{"error": "bad key"}"#)]);
    let err = fetch_descriptions(&config(&server.endpoint, 2000, 3, 10), "archery", 3).unwrap_err();
    assert!(matches!(err, TextError::Auth { status: 401, .. }), "got {err:?}");
    assert_eq!(server.finish(), 1, "a fatal status must not be retried");
}

#[test]
fn two_timeouts_then_success_records_two_retries() {
    let server = MockServer::start(vec![
        Scripted::Stall { hold: Duration::from_millis(400) },
        Scripted::Stall { hold: Duration::from_millis(400) },
        ok(EXAMPLE_REPLY),
    ]);
    let outcome =
        fetch_descriptions(&config(&server.endpoint, 250, 3, 50), "jumping into pool", 3).unwrap();
    assert_eq!(outcome.retries, 2);
    assert_eq!(outcome.descriptions.phases(), 3);
    assert_eq!(server.finish(), 3);
}

#[test]
fn rate_limiting_is_transient() {
    let server =
        MockServer::start(vec![status(429, r#"{"error": "slow down"}"#), ok(EXAMPLE_REPLY)]);
    let outcome =
        fetch_descriptions(&config(&server.endpoint, 2000, 2, 10), "jumping into pool", 3).unwrap();
    assert_eq!(outcome.retries, 1);
    assert_eq!(server.finish(), 2);
}

#[test]
fn persistent_server_errors_exhaust_the_budget() {
    let server = MockServer::start(vec![
        status(500, r#"{"error": "boom"}"#),
        status(500, r#"{"error": "boom"}"#),
    ]);
    let err = fetch_descriptions(&config(&server.endpoint, 2000, 1, 10), "archery", 3).unwrap_err();
    match err {
        TextError::Exhausted { attempts, source } => {
            assert_eq!(attempts, 2);
            assert!(matches!(*source, TextError::Http { status: 500, .. }), "got {source:?}");
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(server.finish(), 2);
}

#[test]
fn unparseable_completion_body_fails_fast() {
    let server = MockServer::start(vec![status(200, "plain text, not a completion")]);
    let err = fetch_descriptions(&config(&server.endpoint, 2000, 3, 10), "archery", 3).unwrap_err();
    assert!(matches!(err, TextError::BadCompletion { .. }), "got {err:?}");
    assert_eq!(server.finish(), 1, "parse failures must not be retried");
}

#[test]
fn wrong_description_arity_fails_fast() {
    let two = r#"{"Action Label": "archery", "sub-action description": ["draws the bow", "releases the arrow"]}"#;
    let server = MockServer::start(vec![ok(two)]);
    let err = fetch_descriptions(&config(&server.endpoint, 2000, 3, 10), "archery", 3).unwrap_err();
    assert!(matches!(err, TextError::WrongArity { expected: 3, got: 2, .. }), "got {err:?}");
    assert_eq!(server.finish(), 1);
}

#[test]
fn unexpected_status_fails_fast() {
    let server = MockServer::start(vec![status(404, "nothing here")]);
    let err = fetch_descriptions(&config(&server.endpoint, 2000, 3, 10), "archery", 3).unwrap_err();
    assert!(matches!(err, TextError::Http { status: 404, .. }), "got {err:?}");
    assert_eq!(server.finish(), 1);
}

#[test]
fn blocking_time_is_bounded_by_the_retry_budget() {
    let server = MockServer::start(vec![
        Scripted::Stall { hold: Duration::from_millis(300) },
        Scripted::Stall { hold: Duration::from_millis(300) },
        Scripted::Stall { hold: Duration::from_millis(300) },
    ]);
    let start = Instant::now();
    let err = fetch_descriptions(&config(&server.endpoint, 150, 2, 20), "archery", 3).unwrap_err();
    let elapsed = start.elapsed();
    assert!(matches!(err, TextError::Exhausted { attempts: 3, .. }), "got {err:?}");
    // Budget: 3 x 150ms timeouts + 20ms + 40ms backoff = 510ms. Allow wide
    // scheduling slack but stay an order of magnitude under "hangs".
    assert!(elapsed < Duration::from_secs(3), "took {elapsed:?}");
    assert_eq!(server.finish(), 3);
}
