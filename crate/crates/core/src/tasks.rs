//! Task definitions: which app to run, how episodes reset and end, how app
//! events turn into rewards, and which extras are published.
//!
//! Tasks are JSON documents:
//!
//! ```json
//! {
//!   "id": "catch_default",
//!   "app_id": "catch",
//!   "max_episode_seconds": 60.0,
//!   "reward_rules": [{ "event": "score", "scale": 1.0 }],
//!   "episode_end_events": [],
//!   "extras": { "ball_pos": [2], "paddle_pos": [1] },
//!   "gestures": { "long_press_ms": 600 }
//! }
//! ```
//!
//! Optional fields: `seed` (base episode seed, default 0), `setup` and
//! `on_reset` (see [`SetupStep`] and [`ResetEvent`]).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps;
use crate::touch::GestureConfig;
use crate::types::{AppEvent, ExtraArray, ExtrasMap};

/// Environment variable naming a directory of task files that replaces the
/// shipped set.
pub const TASK_DIR_ENV: &str = "TOUCHBOARD_TASK_DIR";

const SHIPPED: [(&str, &str); 4] = [
    ("catch_default", include_str!("../tasks/catch_default.json")),
    ("press_button_default", include_str!("../tasks/press_button_default.json")),
    ("slide_2048_default", include_str!("../tasks/slide_2048_default.json")),
    ("drag_match_default", include_str!("../tasks/drag_match_default.json")),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("task file is not valid JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("task references unknown app `{0}`")]
    UnknownApp(String),
    #[error("invalid task field `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("extra `{0}` does not match its declared shape")]
    ShapeMismatch(String),
    #[error("no task with id `{0}`")]
    UnknownTask(String),
    #[error("cannot read task files: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRule {
    pub event: String,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResetTrigger {
    Event(String),
    TimeLimit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupStep {
    /// The app must be present in the registry.
    RequireApp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetEvent {
    /// Restart the app from the episode seed.
    RelaunchApp,
    /// Drop app events not yet turned into rewards.
    ClearLogs,
    /// Drop extras not yet requested.
    ClearExtras,
}

fn default_setup() -> Vec<SetupStep> {
    vec![SetupStep::RequireApp]
}

fn default_on_reset() -> Vec<ResetEvent> {
    vec![ResetEvent::RelaunchApp, ResetEvent::ClearLogs, ResetEvent::ClearExtras]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub app_id: String,
    pub max_episode_seconds: Option<f64>,
    pub reward_rules: Vec<RewardRule>,
    pub episode_end_events: Vec<String>,
    #[serde(default)]
    pub extras: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub gestures: GestureConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_setup")]
    pub setup: Vec<SetupStep>,
    #[serde(default = "default_on_reset")]
    pub on_reset: Vec<ResetEvent>,
}

fn schema(field: &str, reason: impl Into<String>) -> TaskError {
    TaskError::Schema {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

impl TaskSpec {
    pub fn triggers(&self) -> Vec<ResetTrigger> {
        let mut out: Vec<ResetTrigger> = self
            .episode_end_events
            .iter()
            .map(|e| ResetTrigger::Event(e.clone()))
            .collect();
        if let Some(limit) = self.max_episode_seconds {
            out.push(ResetTrigger::TimeLimit(limit));
        }
        out
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.id.is_empty() {
            return Err(schema("id", "must be non-empty"));
        }
        if self.setup.contains(&SetupStep::RequireApp) && !apps::is_registered(&self.app_id) {
            return Err(TaskError::UnknownApp(self.app_id.clone()));
        }
        if let Some(limit) = self.max_episode_seconds {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(schema("max_episode_seconds", format!("must be positive, got {limit}")));
            }
        }
        for rule in &self.reward_rules {
            if rule.event.is_empty() {
                return Err(schema("reward_rules", "event name must be non-empty"));
            }
            if !rule.scale.is_finite() {
                return Err(schema("reward_rules", "scale must be finite"));
            }
        }
        if self.episode_end_events.iter().any(String::is_empty) {
            return Err(schema("episode_end_events", "event name must be non-empty"));
        }
        for (key, shape) in &self.extras {
            if shape.is_empty() || shape.contains(&0) {
                return Err(schema("extras", format!("shape of `{key}` must be non-empty and positive")));
            }
        }
        self.gestures.validate().map_err(|r| schema("gestures", r))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task spec serializes")
    }
}

/// Parses and validates a task file.
pub fn load_task(text: &str) -> Result<TaskSpec, TaskError> {
    let spec: TaskSpec = serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "<document>".to_owned());
            TaskError::Schema { field, reason: msg }
        } else {
            TaskError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            }
        }
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Sums `payload * scale` over events with a reward rule and reports whether
/// any reset trigger fired. Text payloads carry no reward.
pub fn fold_events(events: &[AppEvent], spec: &TaskSpec, episode_elapsed: f64) -> (f64, bool) {
    let mut reward = 0.0;
    let mut ended = false;
    for ev in events {
        for rule in spec.reward_rules.iter().filter(|r| r.event == ev.name) {
            if let Some(v) = ev.payload.as_number() {
                reward += v * rule.scale;
            }
        }
        if spec.episode_end_events.contains(&ev.name) {
            ended = true;
        }
    }
    if let Some(limit) = spec.max_episode_seconds {
        if episode_elapsed >= limit {
            ended = true;
        }
    }
    (reward, ended)
}

/// Extras published since the last request.
#[derive(Debug, Clone, Default)]
pub struct ExtrasAccumulator {
    pending: BTreeMap<String, Vec<ExtraArray>>,
}

impl ExtrasAccumulator {
    pub fn push(&mut self, snapshot: impl IntoIterator<Item = (String, ExtraArray)>) {
        for (k, v) in snapshot {
            self.pending.entry(k).or_default().push(v);
        }
    }

    pub fn clear(&mut self) {
        self.pending.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Drains everything accumulated, keeping declared keys only. The
    /// accumulator is emptied even when validation fails.
    pub fn request(&mut self, spec: &TaskSpec) -> Result<ExtrasMap, TaskError> {
        let pending = std::mem::take(&mut self.pending);
        let mut out = ExtrasMap::new();
        for (key, arrays) in pending {
            let Some(shape) = spec.extras.get(&key) else { continue };
            let len: usize = shape.iter().product();
            if arrays.iter().any(|a| a.data.len() != len || a.shape != *shape) {
                return Err(TaskError::ShapeMismatch(key));
            }
            out.insert(key, arrays);
        }
        Ok(out)
    }
}

/// Task files available to the CLI and server, keyed by task id.
#[derive(Debug, Clone)]
pub struct TaskRegistry {
    tasks: BTreeMap<String, TaskSpec>,
}

impl TaskRegistry {
    pub fn shipped() -> Self {
        let tasks = SHIPPED
            .iter()
            .map(|(id, text)| {
                let spec = load_task(text).unwrap_or_else(|e| panic!("shipped task {id} is invalid: {e}"));
                (spec.id.clone(), spec)
            })
            .collect();
        Self { tasks }
    }

    /// Loads every `*.json` file in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, TaskError> {
        let entries = std::fs::read_dir(dir).map_err(|e| TaskError::Io(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut tasks = BTreeMap::new();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
            let spec = load_task(&text)?;
            tasks.insert(spec.id.clone(), spec);
        }
        Ok(Self { tasks })
    }

    /// The directory named by `TOUCHBOARD_TASK_DIR`, or the shipped tasks.
    pub fn from_env() -> Result<Self, TaskError> {
        match std::env::var_os(TASK_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::from_dir(Path::new(&dir)),
            _ => Ok(Self::shipped()),
        }
    }

    pub fn get(&self, id: &str) -> Result<&TaskSpec, TaskError> {
        self.tasks.get(id).ok_or_else(|| TaskError::UnknownTask(id.to_owned()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.tasks.keys().cloned().collect()
    }

    pub fn insert(&mut self, spec: TaskSpec) {
        self.tasks.insert(spec.id.clone(), spec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_CATCH: &str = r#"{
        "id": "c", "app_id": "catch", "max_episode_seconds": 60,
        "reward_rules": [{"event": "score", "scale": 1}],
        "episode_end_events": []
    }"#;

    fn ev(name: &str, v: f64) -> AppEvent {
        AppEvent::new(0, name, v)
    }

    #[test]
    fn minimal_catch_task() {
        let spec = load_task(MINIMAL_CATCH).unwrap();
        assert_eq!(spec.reward_rules.len(), 1);
        assert_eq!(spec.triggers(), vec![ResetTrigger::TimeLimit(60.0)]);
        assert_eq!(spec.gestures, GestureConfig::default());
        assert_eq!(spec.on_reset, default_on_reset());
    }

    #[test]
    fn unknown_app_rejected() {
        let text = MINIMAL_CATCH.replace("\"catch\"", "\"chess\"");
        assert_eq!(load_task(&text), Err(TaskError::UnknownApp("chess".into())));
    }

    #[test]
    fn negative_time_limit_rejected() {
        let text = MINIMAL_CATCH.replace("60", "-5");
        match load_task(&text) {
            Err(TaskError::Schema { field, .. }) => assert_eq!(field, "max_episode_seconds"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = MINIMAL_CATCH.replace("\"id\"", "\"colour\": 1, \"id\"");
        match load_task(&text) {
            Err(TaskError::Schema { field, .. }) => assert_eq!(field, "colour"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        match load_task("{\n  \"id\": ,\n}") {
            Err(TaskError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_shapes_and_gestures_rejected() {
        let text = MINIMAL_CATCH.replace("\"episode_end_events\": []", "\"episode_end_events\": [], \"extras\": {\"k\": [0]}");
        assert!(matches!(load_task(&text), Err(TaskError::Schema { .. })));
        let text = MINIMAL_CATCH.replace(
            "\"episode_end_events\": []",
            "\"episode_end_events\": [], \"gestures\": {\"tap_max_ms\": 900}",
        );
        assert!(matches!(load_task(&text), Err(TaskError::Schema { .. })));
    }

    #[test]
    fn fold_sums_matching_events() {
        let spec = load_task(MINIMAL_CATCH).unwrap();
        assert_eq!(fold_events(&[ev("score", 1.0), ev("score", 1.0)], &spec, 1.0), (2.0, false));
        assert_eq!(fold_events(&[ev("other", 5.0)], &spec, 1.0), (0.0, false));
        assert_eq!(fold_events(&[AppEvent::new(0, "score", "x")], &spec, 1.0), (0.0, false));
    }

    #[test]
    fn fold_event_trigger() {
        let mut spec = load_task(MINIMAL_CATCH).unwrap();
        spec.episode_end_events = vec!["episode_end".into()];
        assert_eq!(fold_events(&[ev("episode_end", 1.0)], &spec, 0.5), (0.0, true));
    }

    #[test]
    fn fold_time_limit() {
        let spec = load_task(MINIMAL_CATCH).unwrap();
        assert_eq!(fold_events(&[], &spec, 61.0), (0.0, true));
        assert_eq!(fold_events(&[], &spec, 60.0), (0.0, true));
        assert_eq!(fold_events(&[], &spec, 59.9), (0.0, false));
    }

    fn arr(data: Vec<f64>) -> ExtraArray {
        ExtraArray {
            shape: vec![data.len()],
            data,
        }
    }

    #[test]
    fn extras_accumulate_and_clear() {
        let spec = TaskRegistry::shipped().get("catch_default").unwrap().clone();
        let mut acc = ExtrasAccumulator::default();
        acc.push([("ball_pos".to_owned(), arr(vec![0.1, 0.2]))]);
        acc.push([
            ("ball_pos".to_owned(), arr(vec![0.1, 0.3])),
            ("undeclared".to_owned(), arr(vec![1.0])),
        ]);
        let map = acc.request(&spec).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map["ball_pos"].len(), 2);
        assert!(acc.request(&spec).unwrap().is_empty());
    }

    #[test]
    fn extras_shape_mismatch() {
        let spec = TaskRegistry::shipped().get("catch_default").unwrap().clone();
        let mut acc = ExtrasAccumulator::default();
        acc.push([("ball_pos".to_owned(), arr(vec![0.1, 0.2, 0.3]))]);
        assert_eq!(acc.request(&spec), Err(TaskError::ShapeMismatch("ball_pos".into())));
        assert!(acc.is_empty());
    }

    #[test]
    fn shipped_registry() {
        let reg = TaskRegistry::shipped();
        assert_eq!(
            reg.ids(),
            vec!["catch_default", "drag_match_default", "press_button_default", "slide_2048_default"]
        );
        assert!(matches!(reg.get("nope"), Err(TaskError::UnknownTask(_))));
    }

    #[test]
    fn registry_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.json"), MINIMAL_CATCH).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let reg = TaskRegistry::from_dir(dir.path()).unwrap();
        assert_eq!(reg.ids(), vec!["c"]);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = TaskRegistry::shipped().get("slide_2048_default").unwrap().clone();
        assert_eq!(load_task(&spec.to_json()).unwrap(), spec);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn reward_is_linear_in_scale(
            payloads in proptest::collection::vec(-10i32..10, 0..20),
            c in -8i32..8,
        ) {
            let mut spec = TaskRegistry::shipped().get("catch_default").unwrap().clone();
            let events: Vec<AppEvent> = payloads.iter().map(|&p| AppEvent::new(0, "score", p as f64)).collect();
            let (base, _) = fold_events(&events, &spec, 0.0);
            spec.reward_rules[0].scale *= c as f64;
            let (scaled, _) = fold_events(&events, &spec, 0.0);
            prop_assert_eq!(scaled, base * c as f64);
        }
    }
}
