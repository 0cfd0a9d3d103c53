//! Blocking client for the stream framing.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use super::codec::{
    encode, CodecError, Control, Decoder, EnvSpec, ErrorBody, Hello, Message, Role, StepBody, TimeStepBody,
    PROTOCOL_VERSION,
};
use crate::types::{ExtrasMap, FrameBuffer, Observation, RawAction, TimeStep};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("server error {:?}: {}", .0.code, .0.message)]
    Server(ErrorBody),
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error("connection closed by server")]
    Closed,
}

/// A remote environment session.
pub struct RemoteEnv {
    stream: TcpStream,
    decoder: Decoder,
    buf: Vec<u8>,
    role: Role,
}

impl RemoteEnv {
    pub fn connect(addr: impl ToSocketAddrs, role: Role) -> Result<Self, ClientError> {
        Self::connect_with_version(addr, role, PROTOCOL_VERSION)
    }

    pub fn connect_with_version(addr: impl ToSocketAddrs, role: Role, version: u32) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(30)))?;
        let mut env = Self {
            stream,
            decoder: Decoder::new(),
            buf: vec![0; 64 * 1024],
            role,
        };
        env.send(&Message::Hello(Hello { version, role }))?;
        match env.recv()? {
            Message::Hello(h) if h.version == PROTOCOL_VERSION => Ok(env),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn send(&mut self, m: &Message) -> Result<(), ClientError> {
        self.send_bytes(&encode(m))
    }

    pub fn send_bytes(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    /// Next message from the server; ERROR messages become `ClientError::Server`.
    pub fn recv(&mut self) -> Result<Message, ClientError> {
        match self.recv_any()? {
            Message::Error(e) => Err(ClientError::Server(e)),
            m => Ok(m),
        }
    }

    /// Next message from the server, ERROR included.
    pub fn recv_any(&mut self) -> Result<Message, ClientError> {
        loop {
            if let Some(m) = self.decoder.next_message()? {
                return Ok(m);
            }
            let n = self.stream.read(&mut self.buf)?;
            if n == 0 {
                return Err(ClientError::Closed);
            }
            self.decoder.feed(&self.buf[..n]);
        }
    }

    /// Reads a TIMESTEP and the FRAME that follows it.
    pub fn recv_timestep(&mut self) -> Result<TimeStep, ClientError> {
        let body: TimeStepBody = match self.recv()? {
            Message::TimeStep(b) => b,
            other => return Err(ClientError::Unexpected(format!("{:?} instead of TIMESTEP", other.tag()))),
        };
        let frame = match self.recv()? {
            Message::Frame(f) if f.id == body.frame_id => f,
            other => return Err(ClientError::Unexpected(format!("{:?} instead of FRAME", other.tag()))),
        };
        let pixels = FrameBuffer::from_raw(body.width, body.height, frame.data)
            .map_err(|e| ClientError::Unexpected(e.to_string()))?;
        Ok(TimeStep {
            step_type: body.step_type,
            reward: body.reward,
            discount: body.discount,
            observation: Observation {
                pixels,
                timedelta: body.timedelta,
                orientation: body.orientation,
            },
        })
    }

    pub fn reset(&mut self) -> Result<TimeStep, ClientError> {
        self.send(&Message::Reset)?;
        self.recv_timestep()
    }

    pub fn step(&mut self, actions: &[RawAction]) -> Result<TimeStep, ClientError> {
        self.send_step(actions)?;
        self.recv_timestep()
    }

    /// Sends a STEP without waiting, for pipelining.
    pub fn send_step(&mut self, actions: &[RawAction]) -> Result<(), ClientError> {
        self.send(&Message::Step(StepBody {
            actions: actions.to_vec(),
        }))
    }

    pub fn request_extras(&mut self) -> Result<ExtrasMap, ClientError> {
        self.send(&Message::ExtrasReq)?;
        match self.recv()? {
            Message::Extras(x) => Ok(x),
            other => Err(ClientError::Unexpected(format!("{:?} instead of EXTRAS", other.tag()))),
        }
    }

    pub fn spec(&mut self) -> Result<EnvSpec, ClientError> {
        self.send(&Message::Spec(None))?;
        match self.recv()? {
            Message::Spec(Some(s)) => Ok(s),
            other => Err(ClientError::Unexpected(format!("{:?} instead of SPEC", other.tag()))),
        }
    }

    pub fn control(&mut self, c: Control) -> Result<Value, ClientError> {
        self.send(&Message::Control(c))?;
        match self.recv()? {
            Message::Control(Control::Reply { result, .. }) => Ok(result),
            other => Err(ClientError::Unexpected(format!("{:?} instead of a CONTROL reply", other.tag()))),
        }
    }

    pub fn list_tasks(&mut self) -> Result<Vec<String>, ClientError> {
        let v = self.control(Control::ListTasks)?;
        serde_json::from_value(v).map_err(|e| ClientError::Unexpected(e.to_string()))
    }

    pub fn load_task(&mut self, id: &str) -> Result<Value, ClientError> {
        self.control(Control::LoadTask { id: id.to_string() })
    }

    pub fn status(&mut self) -> Result<Value, ClientError> {
        self.control(Control::Status)
    }

    pub fn record_start(&mut self, path: Option<&str>, frame_every: Option<u32>) -> Result<Value, ClientError> {
        self.control(Control::RecordStart {
            path: path.map(str::to_string),
            frame_every,
            policy: None,
        })
    }

    pub fn record_stop(&mut self) -> Result<Value, ClientError> {
        self.control(Control::RecordStop)
    }
}
