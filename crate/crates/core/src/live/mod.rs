//! Live human-in-the-loop sessions over TCP or WebSocket.

pub mod client;
pub mod protocol;
pub mod server;
pub mod session_log;

pub use client::LineClient;
pub use protocol::{ControlVerb, Inbound, Outbound};
pub use server::{LiveSession, SessionHandle, SessionOutcome};
pub use session_log::{replay, replay_log, LogEntry, SessionLog, SessionLogWriter};
