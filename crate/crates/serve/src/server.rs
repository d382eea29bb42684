use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use signforge_core::models::Model;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::classify::classify_frame;
use crate::error::{Result, ServeError};
use crate::session::{apply_command, idle_gap, update_session, SessionCommand, SessionConfig, SessionState};
use crate::wire::{decode_frame, ErrorReply, FrameReply, StateReply};

const INDEX_HTML: &str = include_str!("../static/index.html");
const TICK: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub model_path: PathBuf,
    pub bind: SocketAddr,
    pub session: SessionConfig,
    /// Directory holding the web client bundle; the built-in page is served when absent.
    pub static_dir: Option<PathBuf>,
}

pub struct AppState {
    pub model: Arc<Model>,
    pub defaults: SessionConfig,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(model: Model, defaults: SessionConfig) -> Result<Self> {
        defaults.validate()?;
        Ok(Self {
            model: Arc::new(model),
            defaults,
            next_id: AtomicU64::new(1),
        })
    }
}

#[derive(Serialize)]
struct Health {
    model: String,
    classes: Vec<String>,
    input: [usize; 3],
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let r = Router::new()
        .route("/health", get(health))
        .route("/ws", get(ws_upgrade));
    let r = match static_dir {
        Some(dir) => r.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => r.route("/", get(|| async { Html(INDEX_HTML) })),
    };
    r.with_state(state)
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    let spec = app.model.spec();
    Json(Health {
        model: spec.name.clone(),
        classes: (0..spec.num_classes).map(|c| spec.label(c)).collect(),
        input: spec.input,
    })
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(app): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| session_loop(socket, app)).into_response()
}

fn to_text<S: Serialize>(v: &S) -> Message {
    Message::Text(serde_json::to_string(v).expect("reply serializes").into())
}

fn error_msg(e: impl std::fmt::Display) -> Message {
    to_text(&ErrorReply { error: e.to_string() })
}

async fn session_loop(mut socket: WebSocket, app: Arc<AppState>) {
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    let mut state = SessionState::new(id, app.defaults);
    let start = Instant::now();
    let mut frames = 0u64;
    let mut tick = tokio::time::interval(TICK);
    log::info!("session {id} opened");
    loop {
        let reply = tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(m)) => handle(&app, &mut state, m, start, &mut frames).await,
                Some(Err(e)) => {
                    log::debug!("session {id}: {e}");
                    break;
                }
                None => break,
            },
            _ = tick.tick() => {
                let now = start.elapsed().as_millis() as u64;
                idle_gap(&mut state, now).then(|| state_reply(&state))
            }
        };
        match reply {
            Some(Reply::Send(m)) => {
                if socket.send(m).await.is_err() {
                    break;
                }
            }
            Some(Reply::Close) => break,
            None => {}
        }
    }
    log::info!("session {id} closed after {frames} frames");
}

enum Reply {
    Send(Message),
    Close,
}

fn state_reply(s: &SessionState) -> Reply {
    Reply::Send(to_text(&StateReply {
        text: s.text(),
        config: s.config(),
    }))
}

async fn handle(app: &Arc<AppState>, state: &mut SessionState, msg: Message, start: Instant, frames: &mut u64) -> Option<Reply> {
    match msg {
        Message::Binary(bytes) => {
            let img = match decode_frame(&bytes) {
                Ok(i) => i,
                Err(e) => return Some(Reply::Send(error_msg(e))),
            };
            let index = *frames;
            *frames += 1;
            let now = start.elapsed().as_millis() as u64;
            let model = Arc::clone(&app.model);
            let ev = tokio::task::spawn_blocking(move || {
                let norm = model.spec().normalization.clone();
                classify_frame(&model, &img, &norm, index, now)
            })
            .await;
            let ev = match ev {
                Ok(Ok(ev)) => ev,
                Ok(Err(e)) => return Some(Reply::Send(error_msg(e))),
                Err(e) => return Some(Reply::Send(error_msg(e))),
            };
            idle_gap(state, ev.timestamp_ms);
            let committed = update_session(state, &ev);
            Some(Reply::Send(to_text(&FrameReply {
                frame: ev.frame,
                label: &ev.label,
                prob: ev.prob,
                probs: &ev.probs,
                text: state.text(),
                run: state.run(),
                committed: committed.as_deref(),
            })))
        }
        Message::Text(t) => {
            let cmd: SessionCommand = match serde_json::from_str(t.as_str()) {
                Ok(c) => c,
                Err(e) => return Some(Reply::Send(error_msg(ServeError::Command(e.to_string())))),
            };
            match apply_command(state, &cmd) {
                Ok(()) => Some(state_reply(state)),
                Err(e) => Some(Reply::Send(error_msg(e))),
            }
        }
        Message::Close(_) => Some(Reply::Close),
        _ => None,
    }
}

/// Binds `addr` and serves `app` in the background; returns the bound address.
pub async fn spawn(app: Arc<AppState>, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local = listener.local_addr()?;
    let r = router(app, static_dir);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, r).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

/// Loads the model and serves until the process is stopped.
pub async fn serve(opts: ServeOptions) -> Result<()> {
    let model = Model::load(&opts.model_path).map_err(|source| ServeError::LoadModel {
        path: opts.model_path.clone(),
        source,
    })?;
    let app = Arc::new(AppState::new(model, opts.session)?);
    let (addr, handle) = spawn(app, opts.bind, opts.static_dir).await?;
    log::info!("listening on {addr}");
    handle.await.map_err(|e| ServeError::Io(std::io::Error::other(e)))
}
