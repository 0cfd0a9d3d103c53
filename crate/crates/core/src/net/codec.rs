//! Message framing.
//!
//! Stream framing: a 4-byte big-endian payload length, then the payload,
//! which is a 1-byte tag followed by the body. Bodies are UTF-8 JSON except
//! FRAME, which is an 8-byte big-endian frame id followed by raw RGB bytes.
//!
//! Text framing (browser sockets): one JSON object `{"tag": n, "body": ...}`
//! per message; the FRAME body becomes `{"id": n, "data": "<base64>"}`.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::ClockMode;
use crate::types::{ExtrasMap, Orientation, RawAction, StepType};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 8397;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    Hello = 0,
    Spec = 1,
    Reset = 2,
    Step = 3,
    TimeStep = 4,
    ExtrasReq = 5,
    Extras = 6,
    Control = 7,
    Error = 8,
    Frame = 9,
}

impl Tag {
    pub fn from_u8(b: u8) -> Option<Tag> {
        use Tag::*;
        Some(match b {
            0 => Hello,
            1 => Spec,
            2 => Reset,
            3 => Step,
            4 => TimeStep,
            5 => ExtrasReq,
            6 => Extras,
            7 => Control,
            8 => Error,
            9 => Frame,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Controller,
    Viewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    #[serde(default)]
    pub role: Role,
}

/// Environment description sent in reply to a SPEC request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub task_id: Option<String>,
    pub app_id: Option<String>,
    pub width: usize,
    pub height: usize,
    pub orientation: Orientation,
    pub tick_hz: u32,
    pub max_steps_per_second: Option<f64>,
    pub clock: ClockMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBody {
    pub actions: Vec<RawAction>,
}

/// Observation metadata; the pixels follow in a FRAME with the same id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStepBody {
    pub step_type: StepType,
    pub reward: f64,
    pub discount: f64,
    pub timedelta: u64,
    pub orientation: Orientation,
    pub width: usize,
    pub height: usize,
    pub frame_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum Control {
    ListTasks,
    LoadTask {
        id: String,
    },
    Status,
    RecordStart {
        #[serde(default)]
        path: Option<String>,
        #[serde(default)]
        frame_every: Option<u32>,
        #[serde(default)]
        policy: Option<String>,
    },
    RecordStop,
    /// Server answer to the verb named in `of`.
    Reply {
        of: String,
        result: Value,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    VersionMismatch,
    HelloRequired,
    SessionBusy,
    NotController,
    NotStarted,
    InvalidAction,
    TaskLoadError,
    UnknownTask,
    FrameTooLarge,
    UnknownTag,
    MalformedBody,
    Unexpected,
    RecordingError,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub id: u64,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    /// `None` requests the spec; `Some` carries it.
    Spec(Option<EnvSpec>),
    Reset,
    Step(StepBody),
    TimeStep(TimeStepBody),
    ExtrasReq,
    Extras(ExtrasMap),
    Control(Control),
    Error(ErrorBody),
    Frame(FrameData),
}

impl Message {
    pub fn tag(&self) -> Tag {
        match self {
            Message::Hello(_) => Tag::Hello,
            Message::Spec(_) => Tag::Spec,
            Message::Reset => Tag::Reset,
            Message::Step(_) => Tag::Step,
            Message::TimeStep(_) => Tag::TimeStep,
            Message::ExtrasReq => Tag::ExtrasReq,
            Message::Extras(_) => Tag::Extras,
            Message::Control(_) => Tag::Control,
            Message::Error(_) => Tag::Error,
            Message::Frame(_) => Tag::Frame,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error(ErrorBody {
            code,
            message: message.into(),
        })
    }

    fn json_body(&self) -> Value {
        let v = match self {
            Message::Hello(b) => serde_json::to_value(b),
            Message::Spec(b) => serde_json::to_value(b),
            Message::Reset | Message::ExtrasReq => Ok(Value::Object(Default::default())),
            Message::Step(b) => serde_json::to_value(b),
            Message::TimeStep(b) => serde_json::to_value(b),
            Message::Extras(b) => serde_json::to_value(b),
            Message::Control(b) => serde_json::to_value(b),
            Message::Error(b) => serde_json::to_value(b),
            Message::Frame(f) => Ok(serde_json::json!({"id": f.id, "data": B64.encode(&f.data)})),
        };
        v.expect("message bodies always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte limit")]
    FrameTooLarge(usize),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("malformed body: {0}")]
    MalformedBody(String),
}

impl CodecError {
    pub fn code(&self) -> ErrorCode {
        match self {
            CodecError::FrameTooLarge(_) => ErrorCode::FrameTooLarge,
            CodecError::UnknownTag(_) => ErrorCode::UnknownTag,
            CodecError::MalformedBody(_) => ErrorCode::MalformedBody,
        }
    }

    /// Whether the stream can continue after this error.
    pub fn is_recoverable(&self) -> bool {
        !matches!(self, CodecError::FrameTooLarge(_))
    }
}

fn malformed(e: impl std::fmt::Display) -> CodecError {
    CodecError::MalformedBody(e.to_string())
}

fn parse<T: DeserializeOwned>(v: Value) -> Result<T, CodecError> {
    serde_json::from_value(v).map_err(malformed)
}

fn empty(v: &Value) -> Result<(), CodecError> {
    match v {
        Value::Null => Ok(()),
        Value::Object(m) if m.is_empty() => Ok(()),
        other => Err(malformed(format!("expected an empty body, got {other}"))),
    }
}

fn from_json_body(tag: Tag, v: Value) -> Result<Message, CodecError> {
    Ok(match tag {
        Tag::Hello => Message::Hello(parse(v)?),
        Tag::Spec => Message::Spec(parse(v)?),
        Tag::Reset => {
            empty(&v)?;
            Message::Reset
        }
        Tag::Step => Message::Step(parse(v)?),
        Tag::TimeStep => Message::TimeStep(parse(v)?),
        Tag::ExtrasReq => {
            empty(&v)?;
            Message::ExtrasReq
        }
        Tag::Extras => Message::Extras(parse(v)?),
        Tag::Control => Message::Control(parse(v)?),
        Tag::Error => Message::Error(parse(v)?),
        Tag::Frame => {
            #[derive(Deserialize)]
            struct TextFrame {
                id: u64,
                data: String,
            }
            let f: TextFrame = parse(v)?;
            Message::Frame(FrameData {
                id: f.id,
                data: B64.decode(f.data).map_err(malformed)?,
            })
        }
    })
}

/// Appends the stream encoding of `m` to `out`.
pub fn encode_into(m: &Message, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&[0; 4]);
    out.push(m.tag() as u8);
    match m {
        Message::Frame(f) => {
            out.extend_from_slice(&f.id.to_be_bytes());
            out.extend_from_slice(&f.data);
        }
        other => serde_json::to_writer(&mut *out, &other.json_body()).expect("writing to a Vec cannot fail"),
    }
    let len = (out.len() - start - 4) as u32;
    out[start..start + 4].copy_from_slice(&len.to_be_bytes());
}

pub fn encode(m: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(m, &mut out);
    out
}

/// Decodes one payload (tag byte plus body).
pub fn decode_payload(payload: &[u8]) -> Result<Message, CodecError> {
    let (&tag_byte, body) = payload.split_first().ok_or_else(|| malformed("empty payload"))?;
    let tag = Tag::from_u8(tag_byte).ok_or(CodecError::UnknownTag(tag_byte))?;
    if tag == Tag::Frame {
        if body.len() < 8 {
            return Err(malformed("frame body shorter than its id"));
        }
        let (id, data) = body.split_at(8);
        return Ok(Message::Frame(FrameData {
            id: u64::from_be_bytes(id.try_into().expect("8 bytes")),
            data: data.to_vec(),
        }));
    }
    let v: Value = serde_json::from_slice(body).map_err(malformed)?;
    from_json_body(tag, v)
}

/// Incremental stream decoder: feed bytes as they arrive, pull messages out.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, `Ok(None)` if more bytes are needed.
    ///
    /// After an oversized length prefix the buffer is left untouched, since
    /// the stream cannot be resynchronized.
    pub fn next_message(&mut self) -> Result<Option<Message>, CodecError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(CodecError::FrameTooLarge(len));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let result = decode_payload(&self.buf[4..4 + len]);
        self.buf.drain(..4 + len);
        result.map(Some)
    }
}

#[derive(Serialize, Deserialize)]
struct TextEnvelope {
    tag: u8,
    body: Value,
}

pub fn to_text(m: &Message) -> String {
    serde_json::to_string(&TextEnvelope {
        tag: m.tag() as u8,
        body: m.json_body(),
    })
    .expect("envelope serializes")
}

pub fn from_text(text: &str) -> Result<Message, CodecError> {
    if text.len() > MAX_PAYLOAD {
        return Err(CodecError::FrameTooLarge(text.len()));
    }
    let env: TextEnvelope = serde_json::from_str(text).map_err(malformed)?;
    let tag = Tag::from_u8(env.tag).ok_or(CodecError::UnknownTag(env.tag))?;
    from_json_body(tag, env.body)
}
