//! Human-in-the-loop sessions: a planner-driven robot against one
//! keyboard-driven agent at 10 Hz, over a websocket.
//!
//! - [`protocol`]: the JSON wire messages;
//! - [`session`]: tick logic, recording and headless replay;
//! - [`server`]: transport and the fixed-rate loop.

pub mod protocol;
pub mod server;
pub mod session;

pub use server::{bind, serve, ServerHandle, ServerOptions, SessionSummary};
pub use session::{replay, Recording, Replay, Session};

#[derive(Debug, thiserror::Error)]
pub enum HitlError {
    #[error(transparent)]
    Core(#[from] prosocial_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario not usable for a session: {0}")]
    Scenario(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, HitlError>;
