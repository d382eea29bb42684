//! Live recognition service: frames arrive over a WebSocket, each is classified,
//! stable runs of one letter are committed, and the session's text is sent back.

pub mod classify;
pub mod error;
pub mod fixtures;
pub mod server;
pub mod session;
pub mod wire;

pub use classify::{classify_frame, PredictionEvent};
pub use error::{Result, ServeError};
pub use server::{router, serve, spawn, AppState, ServeOptions};
pub use session::{apply, apply_command, idle_gap, replay, update_session, SessionCommand, SessionConfig, SessionInput, SessionState};
pub use wire::{decode_frame, encode_frame, WireError, FRAME_TAG, HEADER_LEN};
