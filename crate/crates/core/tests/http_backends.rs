//! HTTP backends against a throwaway local server.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use image::{Rgb, RgbImage};
use segforge::io::encode_png_rgb;
use segforge::pipeline::{generate_dataset, DatasetMode, PipelineError};
use segforge::refexpr::{AttributeSet, ExpressionBackend, HttpExpressionBackend, ImageBundle, ExprInstance};
use segforge::relight::{HttpRelight, RelightBackend, RelightBackendKind, RelightError, RelightRequest};
use segforge::{BBox, Mask};

/// Reads one HTTP request (headers plus a Content-Length or chunked body).
fn read_request(stream: &mut std::net::TcpStream) -> Vec<u8> {
    let mut reader = BufReader::new(stream);
    let mut head = String::new();
    let mut length = 0usize;
    let mut chunked = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            length = v.trim().parse().unwrap_or(0);
        }
        if lower.starts_with("transfer-encoding:") && lower.contains("chunked") {
            chunked = true;
        }
        head.push_str(&line);
    }
    let mut body = Vec::new();
    if chunked {
        loop {
            let mut size = String::new();
            reader.read_line(&mut size).unwrap();
            let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
            let mut chunk = vec![0; n + 2];
            reader.read_exact(&mut chunk).unwrap();
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
    } else {
        body.resize(length, 0);
        reader.read_exact(&mut body).unwrap();
    }
    let mut all = head.into_bytes();
    all.extend(body);
    all
}

/// Serves `responses` in order, one per connection; returns the endpoint
/// and a channel yielding each raw request.
fn serve(responses: Vec<(u16, &'static str, Vec<u8>)>) -> (String, mpsc::Receiver<Vec<u8>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, content_type, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let req = read_request(&mut stream);
            let _ = tx.send(req);
            let head = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: {content_type}\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                body.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(&body);
        }
    });
    (url, rx)
}

fn request() -> RelightRequest {
    RelightRequest {
        composite: RgbImage::from_pixel(16, 12, Rgb([10, 20, 30])),
        foreground: Mask::from_fn(16, 12, |x, _| x < 8),
        prompt: "a foggy harbor".into(),
        seed: 1,
    }
}

fn png(w: u32, h: u32) -> Vec<u8> {
    encode_png_rgb(&RgbImage::from_pixel(w, h, Rgb([200, 100, 50])))
}

#[test]
fn relight_round_trip_sends_all_fields() {
    let (url, rx) = serve(vec![(200, "image/png", png(16, 12))]);
    let backend = HttpRelight::new(url, Duration::from_secs(10)).unwrap();
    let resp = backend.relight(&request()).unwrap();
    assert_eq!(resp.relit.get_pixel(3, 3), &Rgb([200, 100, 50]));
    let raw = String::from_utf8_lossy(&rx.recv().unwrap()).into_owned();
    for field in ["name=\"composite\"", "name=\"mask\"", "name=\"prompt\"", "a foggy harbor", "image/png"] {
        assert!(raw.contains(field), "request lacks {field}");
    }
}

#[test]
fn relight_rejects_wrong_dimensions() {
    let (url, _rx) = serve(vec![(200, "image/png", png(8, 8))]);
    let err = HttpRelight::new(url, Duration::from_secs(10)).unwrap().relight(&request()).unwrap_err();
    assert!(matches!(err, RelightError::DimensionMismatch { expected: (16, 12), got: (8, 8) }), "{err}");
}

#[test]
fn relight_reports_status_and_garbage() {
    let (url, _rx) = serve(vec![(500, "text/plain", b"boom".to_vec()), (200, "image/png", b"not a png".to_vec())]);
    let backend = HttpRelight::new(url, Duration::from_secs(10)).unwrap();
    assert!(matches!(backend.relight(&request()), Err(RelightError::Status(500))));
    assert!(matches!(backend.relight(&request()), Err(RelightError::Decode(_))));
}

#[test]
fn relight_unreachable_and_timeout() {
    let closed = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/", l.local_addr().unwrap())
    };
    let err = HttpRelight::new(closed, Duration::from_secs(5)).unwrap().relight(&request()).unwrap_err();
    assert!(matches!(err, RelightError::Unreachable(_)), "{err}");

    let silent = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", silent.local_addr().unwrap());
    let hold = thread::spawn(move || {
        let (stream, _) = silent.accept().unwrap();
        thread::sleep(Duration::from_secs(2));
        drop(stream);
    });
    let err = HttpRelight::new(url, Duration::from_millis(300)).unwrap().relight(&request()).unwrap_err();
    assert!(matches!(err, RelightError::Timeout(_)), "{err}");
    hold.join().unwrap();
}

fn bundle() -> ImageBundle {
    let inst = |ann_id, cat: &str, attr: &str, x| ExprInstance {
        ann_id,
        category: cat.into(),
        attributes: AttributeSet::new([attr]),
        bbox: BBox { x, y: 40, w: 20, h: 20 },
        area: 400,
        prompt: String::new(),
    };
    ImageBundle {
        image_id: 9,
        width: 200,
        height: 200,
        instances: vec![inst(1, "apple", "red", 10), inst(2, "apple", "green", 150), inst(3, "cup", "blue", 80)],
    }
}

#[test]
fn expression_backend_keeps_only_unique_replies() {
    let reply = serde_json::json!([
        {"ann_id": 1, "text": "the red apple", "type": "attribute",
         "predicate": {"target": {"category": "apple", "attributes": ["red"]}, "relation": null}},
        {"ann_id": 2, "text": "the apple", "type": "attribute",
         "predicate": {"target": {"category": "apple", "attributes": []}, "relation": null}},
        {"ann_id": 7, "text": "the ghost", "type": "attribute",
         "predicate": {"target": {"category": "ghost", "attributes": []}, "relation": null}},
        {"ann_id": 2, "text": "the apple to the right of the cup", "type": "spatial",
         "predicate": {"target": {"category": "apple", "attributes": []},
                       "relation": {"kind": "pairwise", "relation": "right_of", "anchor": {"category": "cup", "attributes": []}}}}
    ]);
    let (url, rx) = serve(vec![(200, "application/json", serde_json::to_vec(&reply).unwrap())]);
    let set = HttpExpressionBackend::new(url, Duration::from_secs(10)).unwrap().generate(&bundle(), 0).unwrap();
    let texts: Vec<&str> = set.expressions.iter().map(|e| e.text.as_str()).collect();
    assert_eq!(texts, ["the red apple", "the apple to the right of the cup"]);
    assert_eq!(set.warnings.len(), 2);
    assert_eq!(set.expressions[1].distractor_count, 1);
    let raw = String::from_utf8_lossy(&rx.recv().unwrap()).into_owned();
    assert!(raw.contains("\"ground_truth\"") && raw.contains("\"prompt\""));
}

#[test]
fn unreachable_relight_fails_the_run_with_backend_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::demo_config(dir.path(), DatasetMode::Fc, 3, 128);
    config.layout.bin_proportions = [1.0, 0.0, 0.0];
    config.relight.backend = RelightBackendKind::Http;
    config.relight.endpoint = Some("http://127.0.0.1:9/".into());
    config.relight.timeout_secs = 2;
    config.failure_threshold = 0.0;
    let err = generate_dataset(&config).unwrap_err();
    assert!(matches!(err, PipelineError::TooManyFailures { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(!config.output_dir.join("annotations.json").exists());
}
