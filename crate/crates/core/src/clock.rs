//! Time sources for the engine.
//!
//! A realtime clock reads a monotonic wall clock; a virtual clock only moves
//! when told to, which makes every real-time behaviour reproducible in tests.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Realtime,
    Virtual,
}

impl fmt::Display for ClockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockMode::Realtime => "real",
            ClockMode::Virtual => "virtual",
        })
    }
}

impl FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" | "realtime" => Ok(ClockMode::Realtime),
            "virtual" => Ok(ClockMode::Virtual),
            other => Err(format!("unknown clock mode `{other}` (expected real or virtual)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("only a virtual clock can be advanced manually")]
    NotVirtual,
    #[error("cannot move the clock back from {now} to {target}")]
    Backwards { now: Micros, target: Micros },
}

#[derive(Debug)]
enum Source {
    Realtime(Instant),
    Virtual(AtomicU64),
}

/// Shared handle to a time source; clones observe the same time.
#[derive(Debug, Clone)]
pub struct Clock {
    source: Arc<Source>,
}

impl Clock {
    pub fn new(mode: ClockMode) -> Self {
        match mode {
            ClockMode::Realtime => Self::realtime(),
            ClockMode::Virtual => Self::virtual_clock(),
        }
    }

    pub fn realtime() -> Self {
        Self {
            source: Arc::new(Source::Realtime(Instant::now())),
        }
    }

    /// A virtual clock at time zero.
    pub fn virtual_clock() -> Self {
        Self {
            source: Arc::new(Source::Virtual(AtomicU64::new(0))),
        }
    }

    pub fn mode(&self) -> ClockMode {
        match *self.source {
            Source::Realtime(_) => ClockMode::Realtime,
            Source::Virtual(_) => ClockMode::Virtual,
        }
    }

    pub fn now(&self) -> Micros {
        match &*self.source {
            Source::Realtime(origin) => origin.elapsed().as_micros() as Micros,
            Source::Virtual(now) => now.load(Ordering::Acquire),
        }
    }

    pub fn advance(&self, d: Micros) -> Result<(), ClockError> {
        match &*self.source {
            Source::Realtime(_) => Err(ClockError::NotVirtual),
            Source::Virtual(now) => {
                now.fetch_add(d, Ordering::AcqRel);
                Ok(())
            }
        }
    }

    pub fn advance_to(&self, target: Micros) -> Result<(), ClockError> {
        match &*self.source {
            Source::Realtime(_) => Err(ClockError::NotVirtual),
            Source::Virtual(now) => now
                .fetch_update(Ordering::AcqRel, Ordering::Acquire, |cur| (target >= cur).then_some(target))
                .map(|_| ())
                .map_err(|cur| ClockError::Backwards { now: cur, target }),
        }
    }

    /// Blocks until `deadline` (realtime) or jumps to it (virtual).
    ///
    /// Realtime waits sleep until about a millisecond before the deadline and
    /// spin for the remainder.
    pub fn wait_until(&self, deadline: Micros) {
        match &*self.source {
            Source::Virtual(_) => {
                let _ = self.advance_to(deadline);
            }
            Source::Realtime(_) => loop {
                let now = self.now();
                if now >= deadline {
                    return;
                }
                let remaining = deadline - now;
                if remaining > 1_500 {
                    std::thread::sleep(Duration::from_micros(remaining - 1_000));
                } else {
                    std::hint::spin_loop();
                }
            },
        }
    }
}
