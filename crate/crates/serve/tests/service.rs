use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use image::{Rgb, RgbImage};
use serde_json::Value;
use signforge_serve::fixtures::color_model;
use signforge_serve::{encode_frame, serve, spawn, AppState, ServeError, ServeOptions, SessionConfig};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

fn solid(rgb: [u8; 3]) -> Vec<u8> {
    encode_frame(&RgbImage::from_pixel(16, 16, Rgb(rgb)))
}

const RED: [u8; 3] = [255, 0, 0];
const GREEN: [u8; 3] = [0, 255, 0];

async fn start(config: SessionConfig, static_dir: Option<std::path::PathBuf>) -> SocketAddr {
    let app = Arc::new(AppState::new(color_model(), config).unwrap());
    spawn(app, "127.0.0.1:0".parse().unwrap(), static_dir).await.unwrap().0
}

async fn connect(addr: SocketAddr) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("reply within 10s")
            .expect("socket open")
            .unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn send_frame(ws: &mut Ws, rgb: [u8; 3]) -> Value {
    ws.send(Message::Binary(solid(rgb).into())).await.unwrap();
    next_json(ws).await
}

async fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).await.unwrap();
    let text = String::from_utf8_lossy(&buf).into_owned();
    let status = text[9..12].parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_owned()).unwrap_or_default();
    (status, body)
}

fn quick() -> SessionConfig {
    SessionConfig {
        k: 3,
        idle_ms: 60_000,
        ..SessionConfig::default()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn frame_reply_fields() {
    let addr = start(quick(), None).await;
    let mut ws = connect(addr).await;
    let r = send_frame(&mut ws, RED).await;
    assert_eq!(r["frame"], 0);
    assert_eq!(r["label"], "A");
    assert!(r["prob"].as_f64().unwrap() > 0.99);
    assert_eq!(r["probs"].as_array().unwrap().len(), 24);
    assert_eq!(r["text"], "");
    assert_eq!(r["run"], 1);
    send_frame(&mut ws, RED).await;
    let r = send_frame(&mut ws, RED).await;
    assert_eq!(r["frame"], 2);
    assert_eq!(r["committed"], "A");
    assert_eq!(r["text"], "A");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn two_clients_are_isolated() {
    let addr = start(quick(), None).await;
    let (mut a, mut b) = (connect(addr).await, connect(addr).await);
    for _ in 0..3 {
        send_frame(&mut a, RED).await;
        send_frame(&mut b, GREEN).await;
    }
    for _ in 0..3 {
        send_frame(&mut b, GREEN).await;
    }
    let ra = send_frame(&mut a, GREEN).await;
    let rb = send_frame(&mut b, RED).await;
    assert_eq!(ra["text"], "A");
    assert_eq!(rb["text"], "BB");
    assert_eq!(ra["frame"], 3);
    assert_eq!(rb["frame"], 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_frame_only_hurts_sender() {
    let addr = start(quick(), None).await;
    let (mut a, mut b) = (connect(addr).await, connect(addr).await);
    send_frame(&mut b, GREEN).await;
    a.send(Message::Binary(vec![0x01, 2, 0].into())).await.unwrap();
    assert!(next_json(&mut a).await["error"].as_str().unwrap().contains("header"));
    let mut frame = solid(RED);
    frame.pop();
    a.send(Message::Binary(frame.into())).await.unwrap();
    assert!(next_json(&mut a).await["error"].is_string());
    a.send(Message::Text(r#"{"cmd":"dance"}"#.into())).await.unwrap();
    assert!(next_json(&mut a).await["error"].is_string());
    // Both sockets still work and b's run was untouched.
    assert_eq!(send_frame(&mut a, RED).await["label"], "A");
    let r = send_frame(&mut b, GREEN).await;
    assert_eq!(r["run"], 2);
    assert_eq!(r["frame"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn commands_over_the_socket() {
    let addr = start(quick(), None).await;
    let mut ws = connect(addr).await;
    ws.send(Message::Text(r#"{"cmd":"config","k":1,"tau":0.5,"idle_ms":200}"#.into())).await.unwrap();
    let r = next_json(&mut ws).await;
    assert_eq!(r["config"]["k"], 1);
    assert_eq!(send_frame(&mut ws, RED).await["text"], "A");
    assert_eq!(send_frame(&mut ws, GREEN).await["text"], "AB");
    // The idle tick pushes a space without any frame.
    let r = next_json(&mut ws).await;
    assert_eq!(r["text"], "AB ");
    ws.send(Message::Text(r#"{"cmd":"backspace"}"#.into())).await.unwrap();
    assert_eq!(next_json(&mut ws).await["text"], "AB");
    ws.send(Message::Text(r#"{"cmd":"clear"}"#.into())).await.unwrap();
    assert_eq!(next_json(&mut ws).await["text"], "");
    ws.send(Message::Text(r#"{"cmd":"config","k":0}"#.into())).await.unwrap();
    assert!(next_json(&mut ws).await["error"].is_string());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_index() {
    let addr = start(quick(), None).await;
    let (status, body) = http_get(addr, "/health").await;
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["model"], "color-probe");
    assert_eq!(v["input"], serde_json::json!([3, 8, 8]));
    let classes = v["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 24);
    assert!(!classes.iter().any(|c| c == "J" || c == "Z"));
    let (status, body) = http_get(addr, "/").await;
    assert_eq!(status, 200);
    assert!(body.contains("<html"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn static_bundle_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>bundle</html>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let addr = start(quick(), Some(dir.path().to_owned())).await;
    assert_eq!(http_get(addr, "/").await.1, "<html>bundle</html>");
    assert_eq!(http_get(addr, "/app.js").await.1, "console.log(1)");
    assert_eq!(http_get(addr, "/health").await.0, 200);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn startup_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sgnf");
    std::fs::write(&bad, b"not a model").unwrap();
    let opts = ServeOptions {
        model_path: bad.clone(),
        bind: "127.0.0.1:0".parse().unwrap(),
        session: SessionConfig::default(),
        static_dir: None,
    };
    match serve(opts.clone()).await {
        Err(ServeError::LoadModel { path, .. }) => assert_eq!(path, bad),
        other => panic!("{other:?}"),
    }

    let good = dir.path().join("good.sgnf");
    color_model().save(&good).unwrap();
    let addr = start(quick(), None).await;
    let busy = ServeOptions {
        model_path: good,
        bind: addr,
        ..opts
    };
    assert!(matches!(serve(busy).await, Err(ServeError::Bind { .. })));
}
