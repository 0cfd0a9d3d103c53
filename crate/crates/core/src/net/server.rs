//! Environment server.
//!
//! One listening port carries three kinds of connection, told apart by their
//! first bytes: raw protocol streams, WebSocket upgrades (text framing), and
//! plain HTTP requests for the static UI bundle. Exactly one connection may
//! hold the controller role; any number of viewers receive copies of every
//! TIMESTEP and FRAME.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::codec::{
    encode, from_text, to_text, CodecError, Control, Decoder, EnvSpec, ErrorCode, FrameData, Hello, Message,
    Role, TimeStepBody, DEFAULT_PORT, PROTOCOL_VERSION,
};
use super::http::{serve_static, sniff, Sniffed};
use crate::clock::{Clock, ClockMode};
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::recording::Recorder;
use crate::tasks::{TaskError, TaskRegistry};
use crate::types::{RawAction, TimeStep};

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub clock: ClockMode,
    pub engine: EngineConfig,
    /// Task loaded at startup.
    pub task: Option<String>,
    /// Directory served over HTTP.
    pub ui_dir: Option<PathBuf>,
    /// Base for relative recording paths.
    pub recordings_dir: PathBuf,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            clock: ClockMode::Realtime,
            engine: EngineConfig::default(),
            task: None,
            ui_dir: None,
            recordings_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

struct ActiveRecording {
    recorder: Recorder,
    path: PathBuf,
}

struct Shared {
    engine: Engine,
    registry: TaskRegistry,
    controller: Option<u64>,
    subscribers: HashMap<u64, Sender<Message>>,
    next_frame: u64,
    recording: Option<ActiveRecording>,
    recordings_dir: PathBuf,
}

fn lock(s: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

impl Shared {
    fn env_spec(&self) -> EnvSpec {
        let cfg = self.engine.config();
        let task = self.engine.task();
        EnvSpec {
            task_id: task.as_ref().map(|t| t.id.clone()),
            app_id: task.map(|t| t.app_id),
            width: cfg.native_width,
            height: cfg.native_height,
            orientation: cfg.orientation,
            tick_hz: cfg.tick_hz,
            max_steps_per_second: cfg.max_steps_per_second,
            clock: self.engine.clock().mode(),
        }
    }

    fn publish(&mut self, from: u64, ts: &TimeStep) -> [Message; 2] {
        let id = self.next_frame;
        self.next_frame += 1;
        let obs = &ts.observation;
        let msgs = [
            Message::TimeStep(TimeStepBody {
                step_type: ts.step_type,
                reward: ts.reward,
                discount: ts.discount,
                timedelta: obs.timedelta,
                orientation: obs.orientation,
                width: obs.pixels.width(),
                height: obs.pixels.height(),
                frame_id: id,
            }),
            Message::Frame(FrameData {
                id,
                data: obs.pixels.data().to_vec(),
            }),
        ];
        self.subscribers.retain(|&sid, tx| {
            sid == from || msgs.iter().all(|m| tx.send(m.clone()).is_ok())
        });
        msgs
    }

    fn before_transition(&mut self) {
        let seed = self.engine.next_episode_seed();
        if let Some(r) = self.recording.as_mut() {
            if !r.recorder.started() {
                r.recorder.set_seed(seed);
            }
        }
    }

    fn after_transition(&mut self, ts: &TimeStep, actions: &[RawAction]) {
        if let (Some(r), Some(timing)) = (self.recording.as_mut(), self.engine.last_step_timing()) {
            r.recorder.observe(ts, timing, actions);
        }
    }

    fn finish_recording(&mut self) -> Result<Value, String> {
        let active = self.recording.take().ok_or("no recording in progress")?;
        let steps = active.recorder.len();
        let rec = active.recorder.finish();
        let episodes = rec.episodes();
        rec.write_to(&active.path).map_err(|e| e.to_string())?;
        Ok(json!({"path": active.path.display().to_string(), "steps": steps, "episodes": episodes}))
    }
}

fn engine_error(e: &EngineError) -> Message {
    let code = match e {
        EngineError::NotStarted => ErrorCode::NotStarted,
        EngineError::InvalidAction { .. } => ErrorCode::InvalidAction,
        EngineError::TaskLoad(_) => ErrorCode::TaskLoadError,
        EngineError::Task(TaskError::UnknownTask(_)) => ErrorCode::UnknownTask,
        _ => ErrorCode::Internal,
    };
    Message::error(code, e.to_string())
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Mutex<Shared>>,
    ui_dir: Option<PathBuf>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(config: ServerConfig, registry: TaskRegistry) -> Result<Self, ServerError> {
        let mut engine = Engine::new(config.engine, Clock::new(config.clock))?;
        if let Some(id) = &config.task {
            engine.load_task(registry.get(id)?.clone())?;
        }
        let listener = TcpListener::bind(config.bind)?;
        Ok(Self {
            listener,
            shared: Arc::new(Mutex::new(Shared {
                engine,
                registry,
                controller: None,
                subscribers: HashMap::new(),
                next_frame: 0,
                recording: None,
                recordings_dir: config.recordings_dir,
            })),
            ui_dir: config.ui_dir,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Accepts connections until shut down.
    pub fn run(self) -> io::Result<()> {
        let ids = AtomicU64::new(1);
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::Acquire) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let id = ids.fetch_add(1, Ordering::Relaxed);
            let shared = Arc::clone(&self.shared);
            let ui = self.ui_dir.clone();
            let stop = Arc::clone(&self.stop);
            std::thread::spawn(move || {
                let _ = handle_connection(stream, id, &shared, ui, &stop);
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let stop = Arc::clone(&self.stop);
        let thread = std::thread::spawn(move || {
            let _ = self.run();
        });
        ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

enum Recv {
    Msg(Message),
    Bad(CodecError),
    Idle,
    Closed,
}

trait Transport {
    fn recv(&mut self) -> io::Result<Recv>;
    fn send(&mut self, m: &Message) -> io::Result<()>;
}

fn idle(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

struct StreamTransport {
    stream: TcpStream,
    decoder: Decoder,
    buf: Vec<u8>,
}

impl Transport for StreamTransport {
    fn recv(&mut self) -> io::Result<Recv> {
        loop {
            match self.decoder.next_message() {
                Ok(Some(m)) => return Ok(Recv::Msg(m)),
                Err(e) => return Ok(Recv::Bad(e)),
                Ok(None) => {}
            }
            match self.stream.read(&mut self.buf) {
                Ok(0) => return Ok(Recv::Closed),
                Ok(n) => self.decoder.feed(&self.buf[..n]),
                Err(e) if idle(&e) => return Ok(Recv::Idle),
                Err(e) => return Err(e),
            }
        }
    }

    fn send(&mut self, m: &Message) -> io::Result<()> {
        self.stream.write_all(&encode(m))
    }
}

struct WsTransport {
    ws: tungstenite::WebSocket<TcpStream>,
}

impl Transport for WsTransport {
    fn recv(&mut self) -> io::Result<Recv> {
        use tungstenite::{Error, Message as Ws};
        match self.ws.read() {
            Ok(Ws::Text(t)) => Ok(match from_text(&t) {
                Ok(m) => Recv::Msg(m),
                Err(e) => Recv::Bad(e),
            }),
            Ok(Ws::Binary(b)) => Ok(match super::codec::decode_payload(&b) {
                Ok(m) => Recv::Msg(m),
                Err(e) => Recv::Bad(e),
            }),
            Ok(Ws::Close(_)) => Ok(Recv::Closed),
            Ok(_) => Ok(Recv::Idle),
            Err(Error::Io(e)) if idle(&e) => Ok(Recv::Idle),
            Err(Error::ConnectionClosed | Error::AlreadyClosed) => Ok(Recv::Closed),
            Err(Error::Io(e)) => Err(e),
            Err(e) => Err(io::Error::other(e.to_string())),
        }
    }

    fn send(&mut self, m: &Message) -> io::Result<()> {
        self.ws
            .send(tungstenite::Message::Text(to_text(m)))
            .map_err(|e| match e {
                tungstenite::Error::Io(e) => e,
                other => io::Error::other(other.to_string()),
            })
    }
}

fn handle_connection(
    stream: TcpStream,
    id: u64,
    shared: &Arc<Mutex<Shared>>,
    ui: Option<PathBuf>,
    stop: &AtomicBool,
) -> io::Result<()> {
    stream.set_nodelay(true)?;
    match sniff(&stream, Duration::from_secs(5))? {
        Sniffed::Closed => Ok(()),
        Sniffed::Binary => {
            stream.set_read_timeout(Some(POLL))?;
            let mut t = StreamTransport {
                stream,
                decoder: Decoder::new(),
                buf: vec![0; 64 * 1024],
            };
            session(&mut t, id, shared, stop)
        }
        Sniffed::Http(head) if head.websocket => {
            let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
            ws.get_ref().set_read_timeout(Some(POLL))?;
            session(&mut WsTransport { ws }, id, shared, stop)
        }
        Sniffed::Http(head) => {
            let mut stream = stream;
            serve_static(&mut stream, &head, ui.as_deref())
        }
    }
}

fn session<T: Transport>(t: &mut T, id: u64, shared: &Arc<Mutex<Shared>>, stop: &AtomicBool) -> io::Result<()> {
    let (tx, rx) = mpsc::channel();
    let mut role = None;
    let result = session_loop(t, id, shared, stop, &tx, &rx, &mut role);
    let mut s = lock(shared);
    s.subscribers.remove(&id);
    if s.controller == Some(id) {
        s.controller = None;
        if s.recording.is_some() {
            let _ = s.finish_recording();
        }
    }
    result
}

fn session_loop<T: Transport>(
    t: &mut T,
    id: u64,
    shared: &Arc<Mutex<Shared>>,
    stop: &AtomicBool,
    tx: &Sender<Message>,
    rx: &Receiver<Message>,
    role: &mut Option<Role>,
) -> io::Result<()> {
    while !stop.load(Ordering::Acquire) {
        while let Ok(m) = rx.try_recv() {
            t.send(&m)?;
        }
        match t.recv()? {
            Recv::Idle => {}
            Recv::Closed => return Ok(()),
            Recv::Bad(e) => {
                t.send(&Message::error(e.code(), e.to_string()))?;
                if !e.is_recoverable() {
                    return Ok(());
                }
            }
            Recv::Msg(m) => {
                let (replies, close) = handle(m, id, shared, tx, role);
                for r in &replies {
                    t.send(r)?;
                }
                if close {
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}

fn handle(
    m: Message,
    id: u64,
    shared: &Arc<Mutex<Shared>>,
    tx: &Sender<Message>,
    role: &mut Option<Role>,
) -> (Vec<Message>, bool) {
    let one = |m: Message| (vec![m], false);
    let Some(current) = *role else {
        let Message::Hello(h) = m else {
            return one(Message::error(ErrorCode::HelloRequired, "send HELLO first"));
        };
        if h.version != PROTOCOL_VERSION {
            return (
                vec![Message::error(
                    ErrorCode::VersionMismatch,
                    format!("server speaks protocol {PROTOCOL_VERSION}, client sent {}", h.version),
                )],
                true,
            );
        }
        let mut s = lock(shared);
        if h.role == Role::Controller {
            if s.controller.is_some() {
                return (
                    vec![Message::error(ErrorCode::SessionBusy, "another controller is connected")],
                    true,
                );
            }
            s.controller = Some(id);
        }
        s.subscribers.insert(id, tx.clone());
        *role = Some(h.role);
        return one(Message::Hello(Hello {
            version: PROTOCOL_VERSION,
            role: h.role,
        }));
    };

    let controller_only = matches!(
        m,
        Message::Reset
            | Message::Step(_)
            | Message::ExtrasReq
            | Message::Control(Control::LoadTask { .. } | Control::RecordStart { .. } | Control::RecordStop)
    );
    if controller_only && current != Role::Controller {
        return one(Message::error(ErrorCode::NotController, "this session is read-only"));
    }

    let mut s = lock(shared);
    match m {
        Message::Spec(None) => one(Message::Spec(Some(s.env_spec()))),
        Message::Reset => {
            s.before_transition();
            match s.engine.reset() {
                Ok(ts) => {
                    s.after_transition(&ts, &[]);
                    (s.publish(id, &ts).to_vec(), false)
                }
                Err(e) => one(engine_error(&e)),
            }
        }
        Message::Step(body) => {
            s.before_transition();
            match s.engine.step(&body.actions) {
                Ok(ts) => {
                    s.after_transition(&ts, &body.actions);
                    (s.publish(id, &ts).to_vec(), false)
                }
                Err(e) => one(engine_error(&e)),
            }
        }
        Message::ExtrasReq => match s.engine.request_extras() {
            Ok(x) => one(Message::Extras(x)),
            Err(e) => one(engine_error(&e)),
        },
        Message::Control(c) => one(control(c, &mut s)),
        Message::Hello(_) => one(Message::error(ErrorCode::Unexpected, "session already established")),
        other => one(Message::error(
            ErrorCode::Unexpected,
            format!("{:?} messages are sent by the server only", other.tag()),
        )),
    }
}

fn reply(of: &str, result: Value) -> Message {
    Message::Control(Control::Reply {
        of: of.to_string(),
        result,
    })
}

fn control(c: Control, s: &mut Shared) -> Message {
    match c {
        Control::ListTasks => reply("list_tasks", json!(s.registry.ids())),
        Control::Status => {
            let st = s.engine.status();
            let mut v = serde_json::to_value(st).expect("status serializes");
            v["controller"] = json!(s.controller.is_some());
            v["recording"] = json!(s.recording.as_ref().map(|r| r.path.display().to_string()));
            reply("status", v)
        }
        Control::LoadTask { id } => {
            if s.recording.is_some() {
                return Message::error(ErrorCode::RecordingError, "stop the recording before switching tasks");
            }
            let spec = match s.registry.get(&id) {
                Ok(spec) => spec.clone(),
                Err(e) => return Message::error(ErrorCode::UnknownTask, e.to_string()),
            };
            match s.engine.load_task(spec) {
                Ok(()) => reply("load_task", serde_json::to_value(s.env_spec()).expect("spec serializes")),
                Err(e) => engine_error(&e),
            }
        }
        Control::RecordStart {
            path,
            frame_every,
            policy,
        } => {
            if s.recording.is_some() {
                return Message::error(ErrorCode::RecordingError, "already recording");
            }
            let policy = policy.unwrap_or_else(|| "human".into());
            let Some(header) = Recorder::header_for(&s.engine, Vec::new(), &policy, frame_every.unwrap_or(1)) else {
                return Message::error(ErrorCode::TaskLoadError, "load a task before recording");
            };
            let name = path.unwrap_or_else(|| {
                let secs = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                format!("{}-{}-{secs}.tbrc", header.task_id, policy)
            });
            let path = s.recordings_dir.join(name);
            let shown = path.display().to_string();
            s.recording = Some(ActiveRecording {
                recorder: Recorder::new(header),
                path,
            });
            reply("record_start", json!({"path": shown}))
        }
        Control::RecordStop => match s.finish_recording() {
            Ok(v) => reply("record_stop", v),
            Err(e) => Message::error(ErrorCode::RecordingError, e),
        },
        Control::Reply { .. } => Message::error(ErrorCode::Unexpected, "replies are sent by the server only"),
    }
}
