//! Domain types shared by every module: the hybrid touch action, observations,
//! timesteps, app events and task extras.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation and wall-clock time, in microseconds.
pub type Micros = u64;

/// Discrete component of the raw action.
///
/// Serialized as the integers `0 = Touch`, `1 = Lift`, `2 = Repeat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionType {
    Touch,
    Lift,
    Repeat,
}

impl ActionType {
    pub const ALL: [ActionType; 3] = [ActionType::Touch, ActionType::Lift, ActionType::Repeat];

    pub fn code(self) -> u8 {
        match self {
            ActionType::Touch => 0,
            ActionType::Lift => 1,
            ActionType::Repeat => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ActionType::Touch),
            1 => Some(ActionType::Lift),
            2 => Some(ActionType::Repeat),
            _ => None,
        }
    }
}

impl Serialize for ActionType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for ActionType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        ActionType::from_code(code)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid action type {code}")))
    }
}

/// A screen-relative position in the unit square, origin top-left, y down.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn in_unit_square(self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }
}

/// The environment's native action: an [`ActionType`] plus a screen position.
///
/// JSON form is `{"type": 0|1|2, "x": float, "y": float}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    #[serde(rename = "type")]
    pub action_type: ActionType,
    pub x: f64,
    pub y: f64,
}

impl RawAction {
    pub const fn new(action_type: ActionType, x: f64, y: f64) -> Self {
        Self { action_type, x, y }
    }

    pub const fn touch(x: f64, y: f64) -> Self {
        Self::new(ActionType::Touch, x, y)
    }

    pub const fn lift() -> Self {
        Self::new(ActionType::Lift, 0.0, 0.0)
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ActionError {
    #[error("action position ({0}, {1}) lies outside the unit square")]
    OutOfBounds(f64, f64),
}

/// Accepts an action iff its position lies in the closed unit square.
pub fn validate_action(a: &RawAction) -> Result<(), ActionError> {
    if a.position().in_unit_square() {
        Ok(())
    } else {
        Err(ActionError::OutOfBounds(a.x, a.y))
    }
}

/// Replaces a `Repeat` action with the last resolved action.
///
/// With no prior action in the episode, `Repeat` becomes a `Lift` at the
/// requested position. The result is never `Repeat` as long as
/// `last_resolved` is itself a resolved action.
pub fn resolve_repeat(current: RawAction, last_resolved: Option<RawAction>) -> RawAction {
    if current.action_type != ActionType::Repeat {
        return current;
    }
    match last_resolved {
        Some(last) if last.action_type != ActionType::Repeat => last,
        _ => RawAction::new(ActionType::Lift, current.x, current.y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Orientation {
    #[default]
    Portrait0,
    Landscape90,
    Portrait180,
    Landscape270,
}

impl Orientation {
    pub fn index(self) -> usize {
        match self {
            Orientation::Portrait0 => 0,
            Orientation::Landscape90 => 1,
            Orientation::Portrait180 => 2,
            Orientation::Landscape270 => 3,
        }
    }

    pub fn one_hot(self) -> [u8; 4] {
        let mut v = [0; 4];
        v[self.index()] = 1;
        v
    }
}

/// Row-major RGB image, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct FrameBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("frame data has {actual} bytes, expected {expected} for {width}x{height}")]
pub struct FrameSizeError {
    pub width: usize,
    pub height: usize,
    pub expected: usize,
    pub actual: usize,
}

pub type Rgb = [u8; 3];

impl FrameBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let data = color.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FrameSizeError> {
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(FrameSizeError {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// True when the buffer length matches its dimensions.
    pub fn is_consistent(&self) -> bool {
        self.data.len() == self.width * self.height * 3
    }
}

impl fmt::Debug for FrameBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("bytes", &self.data.len())
            .finish()
    }
}

/// Default observation. Task extras are deliberately absent; they are only
/// served on explicit request.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pixels: FrameBuffer,
    /// Microseconds since the previous observation fetch; 0 right after reset.
    pub timedelta: Micros,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepType {
    First,
    Mid,
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeStep {
    pub step_type: StepType,
    pub reward: f64,
    pub discount: f64,
    pub observation: Observation,
}

impl TimeStep {
    pub fn first(observation: Observation) -> Self {
        Self {
            step_type: StepType::First,
            reward: 0.0,
            discount: 1.0,
            observation,
        }
    }

    pub fn transition(reward: f64, last: bool, observation: Observation) -> Self {
        Self {
            step_type: if last { StepType::Last } else { StepType::Mid },
            reward,
            discount: if last { 0.0 } else { 1.0 },
            observation,
        }
    }

    pub fn is_first(&self) -> bool {
        self.step_type == StepType::First
    }

    pub fn is_last(&self) -> bool {
        self.step_type == StepType::Last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventPayload {
    Number(f64),
    Text(String),
}

impl EventPayload {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            EventPayload::Number(v) => Some(*v),
            EventPayload::Text(_) => None,
        }
    }
}

impl From<f64> for EventPayload {
    fn from(v: f64) -> Self {
        EventPayload::Number(v)
    }
}

impl From<&str> for EventPayload {
    fn from(v: &str) -> Self {
        EventPayload::Text(v.to_owned())
    }
}

/// A structured log record emitted by an app.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppEvent {
    pub timestamp: Micros,
    pub name: String,
    pub payload: EventPayload,
}

impl AppEvent {
    pub fn new(timestamp: Micros, name: impl Into<String>, payload: impl Into<EventPayload>) -> Self {
        let name = name.into();
        debug_assert!(!name.is_empty(), "app event name must be non-empty");
        Self {
            timestamp,
            name,
            payload: payload.into(),
        }
    }
}

/// One numeric array published through the extras channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Extras accumulated since the previous request, keyed by name.
pub type ExtrasMap = BTreeMap<String, Vec<ExtraArray>>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_accepts_interior_and_boundary() {
        assert!(validate_action(&RawAction::touch(0.5, 0.5)).is_ok());
        assert!(validate_action(&RawAction::new(ActionType::Lift, 0.0, 1.0)).is_ok());
    }

    #[test]
    fn validate_rejects_outside() {
        assert_eq!(
            validate_action(&RawAction::touch(1.2, 0.5)),
            Err(ActionError::OutOfBounds(1.2, 0.5))
        );
        assert!(validate_action(&RawAction::touch(0.5, -0.01)).is_err());
        assert!(validate_action(&RawAction::touch(f64::NAN, 0.5)).is_err());
    }

    #[test]
    fn resolve_repeat_cases() {
        let touch = RawAction::touch(0.2, 0.3);
        assert_eq!(resolve_repeat(touch, None), touch);
        assert_eq!(resolve_repeat(touch, Some(RawAction::lift())), touch);

        let repeat = RawAction::new(ActionType::Repeat, 0.9, 0.9);
        assert_eq!(resolve_repeat(repeat, Some(touch)), touch);
        assert_eq!(
            resolve_repeat(repeat, None),
            RawAction::new(ActionType::Lift, 0.9, 0.9)
        );
    }

    #[test]
    fn action_json_uses_integer_type() {
        let a = RawAction::new(ActionType::Repeat, 0.25, 0.5);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"type":2,"x":0.25,"y":0.5}"#);
        assert_eq!(serde_json::from_str::<RawAction>(&s).unwrap(), a);
        assert!(serde_json::from_str::<RawAction>(r#"{"type":3,"x":0,"y":0}"#).is_err());
    }

    #[test]
    fn orientation_one_hot() {
        for o in [
            Orientation::Portrait0,
            Orientation::Landscape90,
            Orientation::Portrait180,
            Orientation::Landscape270,
        ] {
            let v = o.one_hot();
            assert_eq!(v.iter().map(|&b| b as u32).sum::<u32>(), 1);
            assert_eq!(v[o.index()], 1);
        }
    }

    #[test]
    fn framebuffer_length_checked() {
        let fb = FrameBuffer::filled(4, 3, [1, 2, 3]);
        assert_eq!(fb.data().len(), 36);
        assert_eq!(fb.pixel(3, 2), [1, 2, 3]);
        assert!(FrameBuffer::from_raw(4, 3, vec![0; 35]).is_err());
    }

    #[test]
    fn timestep_constructors_follow_contract() {
        let obs = Observation {
            pixels: FrameBuffer::new(1, 1),
            timedelta: 0,
            orientation: Orientation::Portrait0,
        };
        let first = TimeStep::first(obs.clone());
        assert_eq!((first.reward, first.discount), (0.0, 1.0));
        let last = TimeStep::transition(2.0, true, obs);
        assert_eq!(last.step_type, StepType::Last);
        assert_eq!(last.discount, 0.0);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn any_action() -> impl Strategy<Value = RawAction> {
        (0u8..3, 0.0..=1.0f64, 0.0..=1.0f64)
            .prop_map(|(t, x, y)| RawAction::new(ActionType::from_code(t).unwrap(), x, y))
    }

    proptest! {
        #[test]
        fn non_repeat_passes_through(a in any_action(), last in proptest::option::of(any_action())) {
            prop_assume!(a.action_type != ActionType::Repeat);
            prop_assert_eq!(resolve_repeat(a, last), a);
        }

        #[test]
        fn resolution_never_yields_repeat(seq in proptest::collection::vec(any_action(), 1..40)) {
            let mut last = None;
            for a in seq {
                let r = resolve_repeat(a, last);
                prop_assert_ne!(r.action_type, ActionType::Repeat);
                last = Some(r);
            }
        }
    }
}
