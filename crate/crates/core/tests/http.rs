use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use saot_core::backend::{BackendConfig, BackendError, CompletionBackend, HttpBackend};

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` reply per connection, in order.
struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    handle: Option<JoinHandle<()>>,
}

impl Stub {
    fn start(script: Vec<(u16, &'static str)>) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let handle = std::thread::spawn(move || {
            for (status, body) in script {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                let mut authorization = None;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        match k.to_ascii_lowercase().as_str() {
                            "content-length" => length = v.trim().parse().unwrap(),
                            "authorization" => authorization = Some(v.trim().to_string()),
                            _ => {}
                        }
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(Seen {
                    authorization,
                    body: serde_json::from_slice(&buf).unwrap(),
                });
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        Stub {
            url,
            seen,
            handle: Some(handle),
        }
    }

    fn requests(&mut self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }

    fn finish(&mut self) -> Vec<Seen> {
        self.handle.take().unwrap().join().unwrap();
        self.requests()
    }
}

const OK: &str = r#"{"choices":[{"text":" positive"}],"usage":{"prompt_tokens":12,"completion_tokens":1}}"#;

fn config(url: &str) -> BackendConfig {
    let mut c = BackendConfig::http(url, "test-model");
    c.backoff_base_ms = 1;
    c.max_retries = 3;
    c
}

#[test]
fn request_shape_and_successful_reply() {
    let mut stub = Stub::start(vec![(200, OK)]);
    let var = "SAOT_HTTP_TEST_TOKEN_A";
    std::env::set_var(var, "s3cret");
    let mut cfg = config(&stub.url);
    cfg.auth_token_env = Some(var.into());
    cfg.stop = Some(vec!["\n".into()]);
    let backend = HttpBackend::new(&cfg).unwrap();
    let resp = backend.complete(&cfg.request("Is the pasta good?")).unwrap();
    assert_eq!(resp.text, " positive");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (Some(12), Some(1)));
    assert!(!resp.from_cache);

    let seen = stub.finish();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer s3cret"));
    assert_eq!(
        seen[0].body,
        serde_json::json!({
            "model": "test-model",
            "prompt": "Is the pasta good?",
            "max_tokens": 256,
            "temperature": 0.0,
            "stop": ["\n"],
        })
    );
}

#[test]
fn client_error_is_not_retried() {
    let mut stub = Stub::start(vec![(400, r#"{"error":"bad prompt"}"#)]);
    let cfg = config(&stub.url);
    let err = HttpBackend::new(&cfg).unwrap().complete(&cfg.request("x")).unwrap_err();
    match err {
        BackendError::PermanentRejection { status, body } => {
            assert_eq!(status, 400);
            assert!(body.contains("bad prompt"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.finish().len(), 1);
}

#[test]
fn server_errors_are_retried_until_success() {
    let mut stub = Stub::start(vec![(503, "{}"), (502, "{}"), (200, OK)]);
    let cfg = config(&stub.url);
    let resp = HttpBackend::new(&cfg).unwrap().complete(&cfg.request("x")).unwrap();
    assert_eq!(resp.text, " positive");
    assert_eq!(stub.finish().len(), 3);
}

#[test]
fn throttling_is_transient() {
    let mut stub = Stub::start(vec![(429, "{}"), (408, "{}"), (200, OK)]);
    let cfg = config(&stub.url);
    assert!(HttpBackend::new(&cfg).unwrap().complete(&cfg.request("x")).is_ok());
    assert_eq!(stub.finish().len(), 3);
}

#[test]
fn retries_are_bounded() {
    let mut stub = Stub::start(vec![(500, "{}"), (500, "{}"), (500, "{}")]);
    let mut cfg = config(&stub.url);
    cfg.max_retries = 2;
    let err = HttpBackend::new(&cfg).unwrap().complete(&cfg.request("x")).unwrap_err();
    assert!(matches!(err, BackendError::TransientExhausted { attempts: 3, .. }), "{err:?}");
    assert_eq!(stub.finish().len(), 3);
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let mut stub = Stub::start(vec![(200, r#"{"choices":[]}"#)]);
    let cfg = config(&stub.url);
    let err = HttpBackend::new(&cfg).unwrap().complete(&cfg.request("x")).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)));
    assert_eq!(stub.finish().len(), 1);
}

#[test]
fn missing_credential_variable_is_a_config_error() {
    let mut cfg = config("http://127.0.0.1:9/");
    cfg.auth_token_env = Some("SAOT_HTTP_TEST_TOKEN_UNSET".into());
    assert!(matches!(HttpBackend::new(&cfg), Err(BackendError::Config(_))));
}
