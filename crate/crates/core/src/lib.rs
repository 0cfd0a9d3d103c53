//! A real-time touchscreen environment platform for reinforcement learning.
//!
//! Agents observe rendered frames of a running app and act through a single
//! pointer. The simulation keeps running while the agent thinks.

pub mod agents;
pub mod apps;
pub mod clock;
pub mod engine;
pub mod net;
pub mod recording;
pub mod tasks;
pub mod touch;
pub mod types;
pub mod wrappers;

pub use clock::{Clock, ClockMode};
pub use engine::{compute_wait, Engine, EngineConfig, EngineError, StepTiming};
pub use tasks::{TaskError, TaskRegistry, TaskSpec};
pub use touch::{Gesture, GestureConfig, PointerEvent};
pub use types::{
    ActionType, AppEvent, FrameBuffer, Micros, Observation, Orientation, Point, RawAction, StepType, TimeStep,
};
