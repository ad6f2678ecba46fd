use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use inkpipe::client::{infer_batch, EndpointConfig, HttpTransport, InferenceRequest, WireRequest, WireResponse};
use inkpipe::raster::RasterImage;
use tiny_http::{Header, Response, Server};

/// Serves until `expected` requests are handled. The first request for id
/// "flaky" gets a 503; id "bad" always gets a 400; everything else echoes
/// the prompt. Requests without the right bearer token get a 401.
fn spawn_server(expected: usize) -> (String, thread::JoinHandle<()>, Arc<AtomicUsize>) {
    let server = Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/infer", server.server_addr().to_ip().unwrap());
    let flaky_seen = Arc::new(AtomicUsize::new(0));
    let seen = flaky_seen.clone();
    let handle = thread::spawn(move || {
        for _ in 0..expected {
            let mut req = server.recv().unwrap();
            let authorized = req
                .headers()
                .iter()
                .any(|h| h.field.equiv("Authorization") && h.value.as_str() == "Bearer s3cret");
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let wire: WireRequest = serde_json::from_str(&body).unwrap();
            let json = Header::from_bytes("Content-Type", "application/json").unwrap();
            let resp = if !authorized {
                Response::from_string("no token").with_status_code(401)
            } else if wire.id == "bad" {
                Response::from_string("bad request").with_status_code(400)
            } else if wire.id == "flaky" && seen.fetch_add(1, Ordering::SeqCst) == 0 {
                Response::from_string("busy").with_status_code(503)
            } else {
                let img = wire.decode_image().unwrap();
                let answer = format!("{} {}x{}", wire.prompt, img.width(), img.height());
                let out = WireResponse { id: wire.id, answer };
                Response::from_string(serde_json::to_string(&out).unwrap()).with_header(json)
            };
            req.respond(resp).unwrap();
        }
    });
    (url, handle, flaky_seen)
}

#[test]
fn http_round_trip_with_retry_and_auth() {
    let (url, handle, flaky_seen) = spawn_server(5);
    std::env::set_var("INKPIPE_TEST_TOKEN", "s3cret");
    let cfg = EndpointConfig {
        url,
        token_env: "INKPIPE_TEST_TOKEN".into(),
        concurrency: 2,
        backoff_ms: 1,
        timeout_ms: 5_000,
        resolution: 16,
        ..Default::default()
    };
    let img = RasterImage::black(16, 16);
    let reqs: Vec<InferenceRequest> = ["ok2", "flaky", "bad", "ok1"]
        .iter()
        .map(|id| InferenceRequest::new(*id, format!("prompt-{id}"), &img))
        .collect();
    let transport = HttpTransport::new(&cfg).unwrap();
    let out = infer_batch(&reqs, &transport, &cfg);
    handle.join().unwrap();

    let ids: Vec<&str> = out.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["bad", "flaky", "ok1", "ok2"]);
    assert!(out[0].error().unwrap().starts_with("HTTP 400"), "{:?}", out[0]);
    assert_eq!(out[0].attempts, 1);
    assert_eq!(out[1].answer(), Some("prompt-flaky 16x16"));
    assert_eq!(out[1].attempts, 2);
    assert_eq!(flaky_seen.load(Ordering::SeqCst), 2);
    assert_eq!(out[2].answer(), Some("prompt-ok1 16x16"));
    assert_eq!(out[3].attempts, 1);
}

#[test]
fn unreachable_endpoint_exhausts_attempts() {
    // Bind then drop to get a port nothing listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = EndpointConfig {
        url: format!("http://127.0.0.1:{port}/infer"),
        backoff_ms: 1,
        timeout_ms: 2_000,
        resolution: 8,
        ..Default::default()
    };
    let transport = HttpTransport::new(&cfg).unwrap();
    let out = infer_batch(
        &[InferenceRequest::new("a", "p", &RasterImage::black(8, 8))],
        &transport,
        &cfg,
    );
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].attempts, 3);
    assert!(out[0].error().unwrap().starts_with("transient"), "{:?}", out[0]);
}

#[test]
fn missing_url_is_a_config_error() {
    assert!(HttpTransport::new(&EndpointConfig::default()).is_err());
}
