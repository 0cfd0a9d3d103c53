//! Episode recordings and deterministic replay.
//!
//! File layout, all integers big-endian:
//!
//! ```text
//! "TBRC" | version u8 | header_len u32 | header JSON
//!        | records_len u32 | records JSON array
//!        | frame_count u32 | frame_count x (id u64, width u32, height u32, offset u64)
//!        | blob_len u64 | blob (raw RGB, concatenated)
//! ```
//!
//! Records store the actions of each step together with the clock readings
//! at submission and at fetch, so any recording (including one captured on a
//! wall clock) can be re-driven on a virtual clock.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ClockMode;
use crate::engine::{Engine, EngineConfig, EngineError, StepTiming};
use crate::net::codec::PROTOCOL_VERSION;
use crate::tasks::TaskSpec;
use crate::touch::GestureConfig;
use crate::types::{FrameBuffer, Micros, RawAction, StepType, TimeStep};
use crate::wrappers::WrapperSpec;

pub const MAGIC: &[u8; 4] = b"TBRC";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("not a recording (bad magic bytes)")]
    BadMagic,
    #[error("unsupported recording version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated or corrupt recording: {0}")]
    Corrupt(String),
    #[error("record {index} is out of sequence")]
    OutOfSequence { index: usize },
    #[error("record {step} refers to missing frame {frame}")]
    MissingFrame { step: u64, frame: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub task_id: String,
    /// Full task definition, so replay does not depend on the task registry.
    pub task: TaskSpec,
    /// Seed of the first recorded episode; later episodes follow in sequence.
    pub seed: u64,
    pub clock: ClockMode,
    pub engine: EngineConfig,
    pub wrappers: Vec<WrapperSpec>,
    pub gestures: GestureConfig,
    pub protocol_version: u32,
    pub policy: String,
    /// Frames are stored for every n-th record.
    pub frame_every: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub call_us: Micros,
    pub fetch_us: Micros,
    pub actions: Vec<RawAction>,
    pub reward: f64,
    pub step_type: StepType,
    pub timedelta: Micros,
    pub frame: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: RecordingHeader,
    pub records: Vec<StepRecord>,
    pub frames: BTreeMap<u64, FrameBuffer>,
}

/// Builds a recording from observed steps. Recording starts at the first
/// FIRST step; anything observed before it is ignored.
#[derive(Debug)]
pub struct Recorder {
    header: RecordingHeader,
    records: Vec<StepRecord>,
    frames: BTreeMap<u64, FrameBuffer>,
    last_frame: Option<(u64, FrameBuffer)>,
}

impl Recorder {
    pub fn new(header: RecordingHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
            frames: BTreeMap::new(),
            last_frame: None,
        }
    }

    /// Header for a recording of `engine`'s next episodes.
    pub fn header_for(engine: &Engine, wrappers: Vec<WrapperSpec>, policy: &str, frame_every: u32) -> Option<RecordingHeader> {
        let task = engine.task()?;
        Some(RecordingHeader {
            task_id: task.id.clone(),
            gestures: task.gestures,
            task,
            seed: engine.next_episode_seed(),
            clock: engine.clock().mode(),
            engine: engine.config(),
            wrappers,
            protocol_version: PROTOCOL_VERSION,
            policy: policy.to_string(),
            frame_every: frame_every.max(1),
        })
    }

    pub fn header(&self) -> &RecordingHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Whether the recorder has seen its first reset.
    pub fn started(&self) -> bool {
        !self.records.is_empty()
    }

    /// Sets the seed from the episode that is about to start; only possible
    /// before anything was recorded.
    pub fn set_seed(&mut self, seed: u64) {
        if self.records.is_empty() {
            self.header.seed = seed;
        }
    }

    pub fn observe(&mut self, ts: &TimeStep, timing: StepTiming, actions: &[RawAction]) {
        if self.records.is_empty() && !ts.is_first() {
            return;
        }
        let step = self.records.len() as u64;
        let frame = (step % self.header.frame_every as u64 == 0).then(|| self.store_frame(&ts.observation.pixels));
        self.records.push(StepRecord {
            step,
            call_us: timing.call_us,
            fetch_us: timing.fetch_us,
            actions: actions.to_vec(),
            reward: ts.reward,
            step_type: ts.step_type,
            timedelta: ts.observation.timedelta,
            frame,
        });
    }

    fn store_frame(&mut self, fb: &FrameBuffer) -> u64 {
        if let Some((id, last)) = &self.last_frame {
            if last == fb {
                return *id;
            }
        }
        let id = self.frames.len() as u64;
        self.frames.insert(id, fb.clone());
        self.last_frame = Some((id, fb.clone()));
        id
    }

    pub fn finish(self) -> Recording {
        Recording {
            header: self.header,
            records: self.records,
            frames: self.frames,
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RecordingError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RecordingError::Corrupt(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RecordingError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, RecordingError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T, RecordingError> {
        let n = self.u32()? as usize;
        serde_json::from_slice(self.take(n)?).map_err(|e| RecordingError::Corrupt(e.to_string()))
    }
}

impl Recording {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        for json in [
            serde_json::to_vec(&self.header).expect("header serializes"),
            serde_json::to_vec(&self.records).expect("records serialize"),
        ] {
            out.extend_from_slice(&(json.len() as u32).to_be_bytes());
            out.extend_from_slice(&json);
        }
        out.extend_from_slice(&(self.frames.len() as u32).to_be_bytes());
        let mut offset = 0u64;
        for (id, fb) in &self.frames {
            out.extend_from_slice(&id.to_be_bytes());
            out.extend_from_slice(&(fb.width() as u32).to_be_bytes());
            out.extend_from_slice(&(fb.height() as u32).to_be_bytes());
            out.extend_from_slice(&offset.to_be_bytes());
            offset += fb.data().len() as u64;
        }
        out.extend_from_slice(&offset.to_be_bytes());
        for fb in self.frames.values() {
            out.extend_from_slice(fb.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RecordingError> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4).map_err(|_| RecordingError::BadMagic)? != MAGIC {
            return Err(RecordingError::BadMagic);
        }
        let version = c.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(RecordingError::UnsupportedVersion(version));
        }
        let header: RecordingHeader = c.json()?;
        let records: Vec<StepRecord> = c.json()?;
        let count = c.u32()? as usize;
        let mut index = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            index.push((c.u64()?, c.u32()? as usize, c.u32()? as usize, c.u64()?));
        }
        let blob_len = c.u64()? as usize;
        let blob = c.take(blob_len)?;
        if c.pos != bytes.len() {
            return Err(RecordingError::Corrupt("trailing bytes".into()));
        }
        let mut frames = BTreeMap::new();
        for (id, w, h, off) in index {
            let len = w
                .checked_mul(h)
                .and_then(|n| n.checked_mul(3))
                .ok_or_else(|| RecordingError::Corrupt("frame size overflow".into()))?;
            let start = off as usize;
            let data = blob
                .get(start..start.saturating_add(len))
                .ok_or_else(|| RecordingError::Corrupt(format!("frame {id} outside the blob")))?;
            let fb = FrameBuffer::from_raw(w, h, data.to_vec()).map_err(|e| RecordingError::Corrupt(e.to_string()))?;
            frames.insert(id, fb);
        }
        let rec = Recording { header, records, frames };
        rec.check()?;
        Ok(rec)
    }

    fn check(&self) -> Result<(), RecordingError> {
        for (i, r) in self.records.iter().enumerate() {
            if r.step != i as u64 {
                return Err(RecordingError::OutOfSequence { index: i });
            }
            if let Some(f) = r.frame {
                if !self.frames.contains_key(&f) {
                    return Err(RecordingError::MissingFrame { step: r.step, frame: f });
                }
            }
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<(), RecordingError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, RecordingError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn episodes(&self) -> usize {
        self.records.iter().filter(|r| r.step_type == StepType::First).count()
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayOutcome {
    Match { steps: usize },
    Mismatch { step: u64, reason: String },
}

/// Re-drives a recording on a virtual clock and compares every record.
pub fn replay(rec: &Recording) -> Result<ReplayOutcome, RecordingError> {
    let mut engine = Engine::virtual_engine(rec.header.engine.clone())?;
    let mut task = rec.header.task.clone();
    task.gestures = rec.header.gestures;
    engine.load_task(task)?;
    engine.set_seed(rec.header.seed);
    for r in &rec.records {
        let ts = if r.step_type == StepType::First {
            engine.replay_reset(r.call_us)?
        } else {
            engine.replay_step(&r.actions, r.call_us, r.fetch_us)?
        };
        let mismatch = |reason: String| Ok(ReplayOutcome::Mismatch { step: r.step, reason });
        if ts.step_type != r.step_type {
            return mismatch(format!("step type {:?}, recorded {:?}", ts.step_type, r.step_type));
        }
        if ts.reward.to_bits() != r.reward.to_bits() {
            return mismatch(format!("reward {}, recorded {}", ts.reward, r.reward));
        }
        if ts.observation.timedelta != r.timedelta {
            return mismatch(format!("timedelta {}, recorded {}", ts.observation.timedelta, r.timedelta));
        }
        if let Some(id) = r.frame {
            let stored = rec
                .frames
                .get(&id)
                .ok_or(RecordingError::MissingFrame { step: r.step, frame: id })?;
            if *stored != ts.observation.pixels {
                return mismatch(format!("frame {id} differs"));
            }
        }
    }
    Ok(ReplayOutcome::Match {
        steps: rec.records.len(),
    })
}
