//! Live console gateway.
//!
//! One TCP connection carries frames of a 4-byte big-endian length followed
//! by one JSON message. The console opens with [`ClientMessage::Hello`]; the
//! engine answers with [`ServerMessage::Welcome`] and then streams the
//! session until [`ServerMessage::SessionEnd`].

pub mod audit;
pub mod client;
pub mod protocol;
pub mod server;

pub use client::{Client, ConsoleScript, ConsoleTrace, ScriptedConsole};
pub use protocol::{read_frame, write_frame, ClientMessage, FrameError, PromptView, RejectReason, ServerMessage, WorldView, MAX_FRAME, PROTOCOL};
pub use server::{serve, GatewayConfig, GatewayError};
