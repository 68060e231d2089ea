use std::io::{self, Read, Write};

use hsi_core::hazard::{AlertMessage, HazardKind};
use hsi_core::sagat::{Answer, QueryKind, SaLevel};
use hsi_core::session::{Attempt, EndStatus, RobotView, SessionReport};
use hsi_core::world::{CellIndex, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL: &str = "hsi-gateway/1";

/// Frames above this size are refused in both directions.
pub const MAX_FRAME: usize = 4 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    #[serde(rename = "paused")]
    Paused,
    #[serde(rename = "out of order")]
    OutOfOrder,
    #[serde(rename = "malformed")]
    Malformed,
    #[serde(rename = "busy")]
    Busy,
    #[serde(rename = "unsupported protocol")]
    UnsupportedProtocol,
    #[serde(rename = "unexpected")]
    Unexpected,
    #[serde(rename = "invalid action")]
    InvalidAction,
    #[serde(rename = "invalid answer")]
    InvalidAnswer,
    #[serde(rename = "invalid ratings")]
    InvalidRatings,
    #[serde(rename = "task over")]
    TaskOver,
}

/// Static layout shown to the operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldView {
    pub width: u32,
    pub height: u32,
    pub cell_size: f64,
    pub obstacles: Vec<CellIndex>,
    pub target: Vec2,
}

/// One question as the console renders it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptView {
    pub query_id: String,
    pub level: SaLevel,
    pub kind: QueryKind,
    pub prompt: String,
    /// MCQ option labels; the console adds "I don't know". Absent for CMQs,
    /// where the console offers the grid and "Not applicable".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ServerMessage {
    Welcome {
        protocol: String,
        participant_id: String,
        hazard_kind: HazardKind,
        attempt: Attempt,
        task_duration_s: f64,
        dt: f64,
        world: WorldView,
    },
    Snapshot {
        tick: u64,
        remaining_s: f64,
        robots: Vec<RobotView>,
        marked: Vec<CellIndex>,
        /// Alerts delivered since the previous Snapshot sent.
        alerts: Vec<AlertMessage>,
    },
    PauseBegin {
        pause: usize,
        total: usize,
    },
    QueryPrompt {
        pause: usize,
        /// 1-based.
        index: usize,
        total: usize,
        query: PromptView,
    },
    PauseEnd {
        pause: usize,
    },
    SartForm {
        constructs: Vec<String>,
        min: u8,
        max: u8,
    },
    SessionEnd {
        end: EndStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report: Option<Box<SessionReport>>,
    },
    Rejection {
        reason: RejectReason,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        detail: String,
    },
}

impl ServerMessage {
    pub fn reject(reason: RejectReason, detail: impl Into<String>) -> Self {
        ServerMessage::Rejection { reason, detail: detail.into() }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ServerMessage::Welcome { .. } => "Welcome",
            ServerMessage::Snapshot { .. } => "Snapshot",
            ServerMessage::PauseBegin { .. } => "PauseBegin",
            ServerMessage::QueryPrompt { .. } => "QueryPrompt",
            ServerMessage::PauseEnd { .. } => "PauseEnd",
            ServerMessage::SartForm { .. } => "SartForm",
            ServerMessage::SessionEnd { .. } => "SessionEnd",
            ServerMessage::Rejection { .. } => "Rejection",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ClientMessage {
    Hello { protocol: String, console_version: String },
    Mark { cell: CellIndex },
    Unmark { cell: CellIndex },
    Swipe { origin: Vec2, direction: Vec2, magnitude: f64 },
    SagatAnswer { query_id: String, answer: Answer },
    SartSubmit { ratings: Vec<i64> },
}

impl ClientMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ClientMessage::Hello { .. } => "Hello",
            ClientMessage::Mark { .. } => "Mark",
            ClientMessage::Unmark { .. } => "Unmark",
            ClientMessage::Swipe { .. } => "Swipe",
            ClientMessage::SagatAnswer { .. } => "SagatAnswer",
            ClientMessage::SartSubmit { .. } => "SartSubmit",
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> Result<(), FrameError> {
    if body.len() > MAX_FRAME {
        return Err(FrameError::TooLarge(body.len()));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

/// `Ok(None)` on a clean end of stream before a new frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(FrameError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    serde_json::to_vec(msg).expect("protocol messages serialize")
}
