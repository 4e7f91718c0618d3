//! Transport contract: retry behavior, bounded concurrency, byte-identical
//! retries, secret redaction, and the live HTTP path against a local server.

use image::{Rgb, RgbImage};
use sov_core::annotate::{render, RenderStyle};
use sov_core::client::{
    completion_body, ApiKey, ChatTransport, ClientError, EndpointConfig, HttpReply, HttpTransport,
    TransportError, VlmClient,
};
use sov_core::geometry::{AnnotatedFace, BoundingBox};
use sov_core::prompts::{build_per_person, PromptRequest};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

fn sample_request() -> PromptRequest {
    let src = RgbImage::from_pixel(64, 48, Rgb([120, 120, 120]));
    let faces = vec![
        AnnotatedFace::new(1, BoundingBox::new(4.0, 4.0, 30.0, 40.0).unwrap(), None).unwrap(),
    ];
    let img = render(&src, &faces, &RenderStyle::default()).unwrap();
    build_per_person(&img, &[1]).unwrap()
}

fn fast_config() -> EndpointConfig {
    EndpointConfig {
        backoff_initial_ms: 1,
        ..EndpointConfig::default()
    }
}

/// Scripted transport: pops one reply per call, records payloads, tracks
/// concurrent in-flight calls.
struct ScriptedTransport {
    replies: Mutex<Vec<Result<HttpReply, TransportError>>>,
    payloads: Mutex<Vec<String>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    hold_ms: u64,
}

impl ScriptedTransport {
    fn new(replies: Vec<Result<HttpReply, TransportError>>) -> Self {
        Self {
            replies: Mutex::new(replies),
            payloads: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            hold_ms: 0,
        }
    }

    fn repeating_ok(text: &str, hold_ms: u64) -> Self {
        let replies = (0..1024)
            .map(|_| {
                Ok(HttpReply {
                    status: 200,
                    body: completion_body(text),
                })
            })
            .collect();
        let mut t = Self::new(replies);
        t.hold_ms = hold_ms;
        t
    }
}

impl ChatTransport for ScriptedTransport {
    fn execute(&self, body: &str, _cfg: &EndpointConfig) -> Result<HttpReply, TransportError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if self.hold_ms > 0 {
            std::thread::sleep(std::time::Duration::from_millis(self.hold_ms));
        }
        self.payloads.lock().unwrap().push(body.to_string());
        let reply = self
            .replies
            .lock()
            .unwrap()
            .pop()
            .unwrap_or(Err(TransportError::Connect("script exhausted".into())));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        reply
    }
}

#[test]
fn echo_transport_returns_fixed_text() {
    let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpReply {
        status: 200,
        body: completion_body("Person 1: Happy"),
    })]));
    let client = VlmClient::with_transport(fast_config(), transport);
    let answer = client.query(&sample_request()).unwrap();
    assert_eq!(answer.raw_text, "Person 1: Happy");
    assert_eq!(answer.transport_meta.retries, 0);
    assert_eq!(answer.token_usage.unwrap().total_tokens, Some(0));
}

#[test]
fn rate_limit_retried_then_succeeds() {
    // replies pop from the back: two 429s, then 200
    let transport = Arc::new(ScriptedTransport::new(vec![
        Ok(HttpReply {
            status: 200,
            body: completion_body("ok"),
        }),
        Ok(HttpReply {
            status: 429,
            body: "slow down".into(),
        }),
        Ok(HttpReply {
            status: 429,
            body: "slow down".into(),
        }),
    ]));
    let client = VlmClient::with_transport(fast_config(), transport.clone());
    let answer = client.query(&sample_request()).unwrap();
    assert_eq!(answer.raw_text, "ok");
    assert_eq!(answer.transport_meta.retries, 2);
    assert_eq!(answer.transport_meta.attempts.len(), 3);

    // retried payloads are byte-identical
    let payloads = transport.payloads.lock().unwrap();
    assert_eq!(payloads.len(), 3);
    assert_eq!(payloads[0], payloads[1]);
    assert_eq!(payloads[1], payloads[2]);
}

#[test]
fn rate_limit_exhausts_after_max_retries() {
    let always_429: Vec<_> = (0..8)
        .map(|_| {
            Ok(HttpReply {
                status: 429,
                body: "slow down".into(),
            })
        })
        .collect();
    let transport = Arc::new(ScriptedTransport::new(always_429));
    let client = VlmClient::with_transport(fast_config(), transport.clone());
    match client.query(&sample_request()) {
        Err(ClientError::RateLimited { attempts: 4 }) => {}
        other => panic!("expected RateLimited after 4 attempts, got {other:?}"),
    }
    assert_eq!(transport.payloads.lock().unwrap().len(), 4); // 1 + 3 retries
}

#[test]
fn auth_failure_is_never_retried() {
    for status in [401u16, 403] {
        let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpReply {
            status,
            body: "no".into(),
        })]));
        let client = VlmClient::with_transport(fast_config(), transport.clone());
        match client.query(&sample_request()) {
            Err(ClientError::Auth { status: s }) => assert_eq!(s, status),
            other => panic!("expected Auth, got {other:?}"),
        }
        assert_eq!(
            transport.payloads.lock().unwrap().len(),
            1,
            "auth errors must not be retried"
        );
    }
}

#[test]
fn server_errors_retry_then_surface() {
    let replies: Vec<_> = (0..8)
        .map(|_| {
            Ok(HttpReply {
                status: 503,
                body: "unavailable".into(),
            })
        })
        .collect();
    let client = VlmClient::with_transport(fast_config(), Arc::new(ScriptedTransport::new(replies)));
    assert!(matches!(
        client.query(&sample_request()),
        Err(ClientError::Server { status: 503, attempts: 4 })
    ));
}

#[test]
fn timeouts_retry_then_surface() {
    let replies: Vec<Result<HttpReply, TransportError>> =
        (0..8).map(|_| Err(TransportError::Timeout)).collect();
    let client = VlmClient::with_transport(fast_config(), Arc::new(ScriptedTransport::new(replies)));
    assert!(matches!(
        client.query(&sample_request()),
        Err(ClientError::Timeout { attempts: 4 })
    ));
}

#[test]
fn malformed_response_is_a_parse_error() {
    let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpReply {
        status: 200,
        body: r#"{"choices": [{"message": {}}]}"#.into(),
    })]));
    let client = VlmClient::with_transport(fast_config(), transport);
    assert!(matches!(
        client.query(&sample_request()),
        Err(ClientError::Malformed(_))
    ));
}

#[test]
fn concurrency_is_bounded_by_config() {
    let cfg = EndpointConfig {
        max_concurrent: 3,
        backoff_initial_ms: 1,
        ..EndpointConfig::default()
    };
    let transport = Arc::new(ScriptedTransport::repeating_ok("ok", 10));
    let client = Arc::new(VlmClient::with_transport(cfg, transport.clone()));
    let req = Arc::new(sample_request());
    let mut handles = Vec::new();
    for _ in 0..12 {
        let client = client.clone();
        let req = req.clone();
        handles.push(std::thread::spawn(move || {
            client.query(&req).unwrap();
        }));
    }
    for h in handles {
        h.join().unwrap();
    }
    let peak = transport.peak.load(Ordering::SeqCst);
    assert!(peak <= 3, "peak concurrency {peak} exceeded the configured limit");
    assert_eq!(transport.payloads.lock().unwrap().len(), 12);
}

#[test]
fn secrets_never_reach_logs_or_artifacts() {
    const SECRET: &str = "sk-TOPSECRET-0xDEADBEEF";
    let dir = tempfile::tempdir().unwrap();
    let cfg = EndpointConfig {
        api_key: Some(ApiKey::new(SECRET)),
        backoff_initial_ms: 1,
        ..EndpointConfig::default()
    };
    // config serialization is already redacted
    assert!(!serde_json::to_string(&cfg).unwrap().contains("TOPSECRET"));

    let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpReply {
        status: 200,
        body: completion_body("Person 1: Happy"),
    })]));
    let client =
        VlmClient::with_transport(cfg, transport.clone()).with_log_dir(dir.path().to_path_buf());
    let answer = client.query(&sample_request()).unwrap();

    // the answer and its serialization are clean
    let serialized = serde_json::to_string(&answer).unwrap();
    assert!(!serialized.contains("TOPSECRET"));
    // the wire body never carries the credential (it travels as a header)
    for payload in transport.payloads.lock().unwrap().iter() {
        assert!(!payload.contains("TOPSECRET"));
    }
    // every transport log file is clean
    let mut scanned = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let content = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!content.contains("TOPSECRET"));
        scanned += 1;
    }
    assert!(scanned >= 2, "expected request+response logs, got {scanned}");
    // error chains are clean too
    let err = ClientError::Auth { status: 401 };
    assert!(!format!("{err} {err:?}").contains("TOPSECRET"));
}

#[test]
fn oversized_images_are_downscaled_on_the_wire() {
    let src = RgbImage::from_pixel(2300, 900, Rgb([10, 20, 30]));
    let faces = vec![
        AnnotatedFace::new(1, BoundingBox::new(10.0, 10.0, 200.0, 200.0).unwrap(), None).unwrap(),
    ];
    let img = render(&src, &faces, &RenderStyle::default()).unwrap();
    let req = build_per_person(&img, &[1]).unwrap();
    let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpReply {
        status: 200,
        body: completion_body("ok"),
    })]));
    let client = VlmClient::with_transport(fast_config(), transport.clone());
    let answer = client.query(&req).unwrap();
    assert!(answer.transport_meta.downscaled);

    // the payload carries the smaller image, not the original
    let payloads = transport.payloads.lock().unwrap();
    let original_b64_len = (req.image_png.len() / 3 + 1) * 4;
    assert!(payloads[0].len() < original_b64_len);
}

/// Minimal one-shot HTTP/1.1 server for exercising the real transport.
fn serve_once(response_status: u16, body: String) -> (String, std::thread::JoinHandle<String>) {
    use std::io::{Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = vec![0u8; 65536];
        let mut received = Vec::new();
        // read until the full content-length body arrived
        loop {
            let n = stream.read(&mut buf).unwrap();
            received.extend_from_slice(&buf[..n]);
            let text = String::from_utf8_lossy(&received);
            if let Some(header_end) = text.find("\r\n\r\n") {
                let content_length = text
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                    .unwrap_or(0);
                if received.len() >= header_end + 4 + content_length {
                    break;
                }
            }
            if n == 0 {
                break;
            }
        }
        let reply = format!(
            "HTTP/1.1 {response_status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(reply.as_bytes()).unwrap();
        String::from_utf8_lossy(&received).into_owned()
    });
    (format!("http://{addr}"), handle)
}

#[test]
fn http_transport_round_trip_with_bearer_header() {
    let (url, server) = serve_once(200, completion_body("Person 1: Neutral"));
    let cfg = EndpointConfig {
        base_url: url,
        api_key: Some(ApiKey::new("sk-live-key")),
        timeout_secs: 10.0,
        max_retries: 0,
        ..EndpointConfig::default()
    };
    let transport = HttpTransport::new(&cfg).unwrap();
    let client = VlmClient::with_transport(cfg, Arc::new(transport));
    let answer = client.query(&sample_request()).unwrap();
    assert_eq!(answer.raw_text, "Person 1: Neutral");

    let received = server.join().unwrap();
    assert!(received.starts_with("POST /chat/completions"));
    assert!(received.contains("authorization: Bearer sk-live-key")
        || received.contains("Authorization: Bearer sk-live-key"));
    assert!(received.contains("data:image/png;base64,"));
}
