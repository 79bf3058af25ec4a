use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::json;
use slotforge_core::providers::{call_external, ProviderEndpoint, ProviderError, RetryPolicy};

/// What the stub does with one request.
#[derive(Clone)]
enum Reply {
    Echo,
    Status(u16, &'static str),
    Stall(u64),
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let head = format!(
        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body.as_bytes());
}

/// Serves `replies` in order, one per connection; returns the url and the
/// request bodies seen so far.
fn stub(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for reply in replies {
            let Ok((mut stream, _)) = listener.accept() else {
                return;
            };
            let body = read_request(&mut stream);
            log.lock().unwrap().push(body.clone());
            match reply {
                Reply::Echo => respond(&mut stream, 200, &body),
                Reply::Status(code, text) => respond(&mut stream, code, text),
                Reply::Stall(ms) => {
                    thread::sleep(Duration::from_millis(ms));
                    respond(&mut stream, 200, "{}");
                }
            }
        }
    });
    (url, seen)
}

fn endpoint(url: &str, attempts: u32) -> ProviderEndpoint {
    ProviderEndpoint {
        retry: RetryPolicy { max_attempts: attempts, backoff_ms: 1 },
        timeout_ms: 2_000,
        ..ProviderEndpoint::new(url)
    }
}

#[test]
fn echo_succeeds_on_first_attempt() {
    let (url, seen) = stub(vec![Reply::Echo]);
    let payload = json!({"text": "Heparin treats thrombosis.", "role": "ner", "doc_id": "d1"});
    let out = call_external(&endpoint(&url, 3), &payload).unwrap();
    assert_eq!(out.attempts, 1);
    assert_eq!(out.body, payload);
    // canonical form: keys sorted
    assert_eq!(seen.lock().unwrap()[0], r#"{"doc_id":"d1","role":"ner","text":"Heparin treats thrombosis."}"#);
}

#[test]
fn server_errors_are_retried() {
    let (url, _) =
        stub(vec![Reply::Status(500, "oops"), Reply::Status(500, "oops"), Reply::Status(200, r#"{"ok":true}"#)]);
    let out = call_external(&endpoint(&url, 3), &json!({})).unwrap();
    assert_eq!(out.attempts, 3);
    assert_eq!(out.body, json!({"ok": true}));
}

#[test]
fn retries_stop_at_the_policy_limit() {
    let (url, seen) = stub(vec![Reply::Status(503, ""), Reply::Status(503, ""), Reply::Echo]);
    let err = call_external(&endpoint(&url, 2), &json!({})).unwrap_err();
    assert!(matches!(err, ProviderError::Transport { attempts: 2, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn unreachable_endpoint_reports_attempts() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = call_external(&endpoint(&format!("http://127.0.0.1:{port}/"), 2), &json!({})).unwrap_err();
    assert!(matches!(err, ProviderError::Transport { attempts: 2, .. }), "{err:?}");
    assert_eq!(err.attempts(), 2);
}

#[test]
fn unparseable_body_is_a_bad_response() {
    let (url, _) = stub(vec![Reply::Status(200, "not json")]);
    let err = call_external(&endpoint(&url, 3), &json!({})).unwrap_err();
    assert!(matches!(err, ProviderError::BadResponse { attempts: 1, .. }), "{err:?}");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = stub(vec![Reply::Status(400, "bad"), Reply::Echo]);
    let err = call_external(&endpoint(&url, 3), &json!({})).unwrap_err();
    assert!(matches!(err, ProviderError::BadResponse { attempts: 1, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn slow_endpoint_times_out() {
    let (url, _) = stub(vec![Reply::Stall(1_500)]);
    let ep = ProviderEndpoint { timeout_ms: 200, ..endpoint(&url, 1) };
    let err = call_external(&ep, &json!({})).unwrap_err();
    assert!(matches!(err, ProviderError::Timeout { attempts: 1 }), "{err:?}");
}
