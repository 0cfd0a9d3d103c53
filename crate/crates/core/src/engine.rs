//! The agent-environment loop.
//!
//! The app simulation advances in fixed ticks on a grid anchored at clock
//! time zero. Actions submitted by `step` are queued and delivered one per
//! tick, at the first tick boundary after submission. Frames are rendered
//! only when an observation is fetched.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::{create_app, App};
use crate::clock::{Clock, ClockError, ClockMode};
use crate::tasks::{fold_events, ExtrasAccumulator, ResetEvent, TaskError, TaskSpec};
use crate::touch::{to_pointer, GestureTracker};
use crate::types::{
    resolve_repeat, validate_action, ActionError, ActionType, AppEvent, ExtrasMap, FrameBuffer, Micros,
    Observation, Orientation, RawAction, TimeStep,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// `None` disables the pacing wait.
    pub max_steps_per_second: Option<f64>,
    pub tick_hz: u32,
    pub action_buffer_limit: usize,
    pub native_width: usize,
    pub native_height: usize,
    pub orientation: Orientation,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_steps_per_second: None,
            tick_hz: 60,
            action_buffer_limit: 32,
            native_width: 240,
            native_height: 360,
            orientation: Orientation::Portrait0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if !(30..=240).contains(&self.tick_hz) {
            return bad(format!("tick_hz must be in [30, 240], got {}", self.tick_hz));
        }
        if self.action_buffer_limit == 0 {
            return bad("action_buffer_limit must be at least 1".into());
        }
        if let Some(r) = self.max_steps_per_second {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("max_steps_per_second must be positive, got {r}"));
            }
        }
        if self.native_width == 0 || self.native_height == 0 {
            return bad("native screen dimensions must be positive".into());
        }
        Ok(())
    }

    pub fn tick_us(&self) -> Micros {
        (1e6 / self.tick_hz as f64).round() as Micros
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("step called before reset")]
    NotStarted,
    #[error("action {index} is invalid: {source}")]
    InvalidAction { index: usize, source: ActionError },
    #[error("task load error: {0}")]
    TaskLoad(String),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("operation requires a virtual clock")]
    NotVirtual,
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Pacing wait before fetching the next observation.
pub fn compute_wait(last_fetch: Micros, now: Micros, rate: Option<f64>) -> Micros {
    match rate {
        None => 0,
        Some(r) => {
            let period = (1e6 / r).round() as Micros;
            period.saturating_sub(now.saturating_sub(last_fetch))
        }
    }
}

/// Clock readings for one step: when actions were submitted and when the
/// observation was fetched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTiming {
    pub call_us: Micros,
    pub fetch_us: Micros,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    submitted: Micros,
    action: RawAction,
}

struct Core {
    config: EngineConfig,
    tick: Micros,
    task: Option<TaskSpec>,
    app: Option<Box<dyn App>>,
    tracker: GestureTracker,
    pending: VecDeque<Pending>,
    sim_time: Micros,
    last_fetch: Option<Micros>,
    last_resolved: Option<RawAction>,
    episode_start: Micros,
    episodes_started: u64,
    base_seed: u64,
    episode_over: bool,
    extras: ExtrasAccumulator,
    unfolded: Vec<AppEvent>,
    event_log: Vec<AppEvent>,
    last_timing: Option<StepTiming>,
}

impl Core {
    fn advance_sim_to(&mut self, t: Micros) {
        let Some(app) = self.app.as_mut() else {
            self.sim_time = t - t % self.tick;
            return;
        };
        while self.sim_time + self.tick <= t {
            let b = self.sim_time + self.tick;
            app.update(b, self.tick);
            self.sim_time = b;
            if let Some(g) = self.tracker.poll(b) {
                app.handle_gesture(&g, b);
            }
            if self.pending.front().is_some_and(|p| p.submitted <= b) {
                let p = self.pending.pop_front().expect("front checked");
                if let Some(ev) = to_pointer(&p.action, self.tracker.is_down(), b) {
                    app.handle_pointer(&ev);
                    if let Ok(Some(g)) = self.tracker.feed(&ev) {
                        app.handle_gesture(&g, b);
                    }
                }
            }
            self.unfolded.extend(app.drain_events());
        }
    }

    fn enqueue(&mut self, actions: &[RawAction], t: Micros) {
        for a in actions {
            let mut r = resolve_repeat(*a, self.last_resolved);
            self.last_resolved = Some(r);
            if r.action_type == ActionType::Lift {
                r = RawAction::lift();
            }
            self.pending.push_back(Pending { submitted: t, action: r });
            if self.pending.len() > self.config.action_buffer_limit {
                self.pending.pop_front();
            }
        }
    }

    fn render(&self) -> Observation {
        let mut fb = FrameBuffer::new(self.config.native_width, self.config.native_height);
        if let Some(app) = &self.app {
            app.render(&mut fb);
        }
        Observation {
            pixels: fb,
            timedelta: 0,
            orientation: self.config.orientation,
        }
    }

    fn reset_at(&mut self, t: Micros) -> Result<TimeStep, EngineError> {
        let task = self
            .task
            .clone()
            .ok_or_else(|| EngineError::TaskLoad("no task loaded".into()))?;
        self.advance_sim_to(t);
        let seed = self.base_seed.wrapping_add(self.episodes_started);
        self.episodes_started += 1;
        let app = self.app.as_mut().expect("task implies app");
        for ev in &task.on_reset {
            match ev {
                ResetEvent::RelaunchApp => app.reseed(seed),
                ResetEvent::ClearLogs => {
                    app.drain_events();
                }
                ResetEvent::ClearExtras => self.extras.clear(),
            }
        }
        self.unfolded.clear();
        self.event_log.clear();
        self.pending.clear();
        self.last_resolved = None;
        self.tracker.reset();
        self.episode_over = false;
        self.episode_start = t;
        self.last_fetch = Some(t);
        self.last_timing = Some(StepTiming { call_us: t, fetch_us: t });
        if let Some(app) = &self.app {
            self.extras.push(app.extras());
        }
        Ok(TimeStep::first(self.render()))
    }

    fn begin_step(&mut self, actions: &[RawAction], t_call: Micros) -> Result<(), EngineError> {
        if self.last_fetch.is_none() {
            return Err(EngineError::NotStarted);
        }
        for (index, a) in actions.iter().enumerate() {
            validate_action(a).map_err(|source| EngineError::InvalidAction { index, source })?;
        }
        self.advance_sim_to(t_call);
        self.enqueue(actions, t_call);
        Ok(())
    }

    fn finish_step(&mut self, t_call: Micros, t_fetch: Micros) -> TimeStep {
        self.advance_sim_to(t_fetch);
        let task = self.task.as_ref().expect("started implies task");
        let app = self.app.as_mut().expect("started implies app");
        self.unfolded.extend(app.drain_events());
        let events = std::mem::take(&mut self.unfolded);
        let elapsed = (t_fetch - self.episode_start) as f64 / 1e6;
        let (reward, last) = fold_events(&events, task, elapsed);
        self.event_log.extend(events);
        self.extras.push(app.extras());
        let mut obs = self.render();
        obs.timedelta = t_fetch - self.last_fetch.unwrap_or(t_fetch);
        self.last_fetch = Some(t_fetch);
        self.last_timing = Some(StepTiming {
            call_us: t_call,
            fetch_us: t_fetch,
        });
        self.episode_over = last;
        TimeStep::transition(reward, last, obs)
    }
}

/// Point-in-time summary of the engine for status queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineStatus {
    pub clock: ClockMode,
    pub now_us: Micros,
    pub task: Option<String>,
    pub started: bool,
    pub episode_over: bool,
    pub episodes: u64,
    pub pending_actions: usize,
}

pub struct Engine {
    clock: Clock,
    core: Arc<Mutex<Core>>,
    ticker: Option<(Arc<AtomicBool>, JoinHandle<()>)>,
}

impl Engine {
    pub fn new(config: EngineConfig, clock: Clock) -> Result<Self, EngineError> {
        config.validate()?;
        let tick = config.tick_us();
        let sim_time = clock.now() - clock.now() % tick;
        let core = Core {
            config,
            tick,
            task: None,
            app: None,
            tracker: GestureTracker::new(Default::default()),
            pending: VecDeque::new(),
            sim_time,
            last_fetch: None,
            last_resolved: None,
            episode_start: 0,
            episodes_started: 0,
            base_seed: 0,
            episode_over: false,
            extras: ExtrasAccumulator::default(),
            unfolded: Vec::new(),
            event_log: Vec::new(),
            last_timing: None,
        };
        let mut engine = Self {
            clock,
            core: Arc::new(Mutex::new(core)),
            ticker: None,
        };
        if engine.clock.mode() == ClockMode::Realtime {
            engine.spawn_ticker();
        }
        Ok(engine)
    }

    /// An engine on a fresh virtual clock.
    pub fn virtual_engine(config: EngineConfig) -> Result<Self, EngineError> {
        Self::new(config, Clock::virtual_clock())
    }

    fn spawn_ticker(&mut self) {
        let stop = Arc::new(AtomicBool::new(false));
        let core = Arc::clone(&self.core);
        let clock = self.clock.clone();
        let flag = Arc::clone(&stop);
        let tick = lock(&core).tick;
        let handle = std::thread::spawn(move || {
            while !flag.load(Ordering::Acquire) {
                let now = clock.now();
                std::thread::sleep(std::time::Duration::from_micros(tick - now % tick));
                let mut c = lock(&core);
                let now = clock.now();
                c.advance_sim_to(now);
            }
        });
        self.ticker = Some((stop, handle));
    }

    fn core(&self) -> MutexGuard<'_, Core> {
        lock(&self.core)
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn now(&self) -> Micros {
        self.clock.now()
    }

    pub fn config(&self) -> EngineConfig {
        self.core().config.clone()
    }

    /// Changes the pacing rate; `None` disables pacing.
    pub fn set_rate(&mut self, rate: Option<f64>) -> Result<(), EngineError> {
        let mut c = self.core();
        let mut cfg = c.config.clone();
        cfg.max_steps_per_second = rate;
        cfg.validate()?;
        c.config = cfg;
        Ok(())
    }

    pub fn load_task(&mut self, spec: TaskSpec) -> Result<(), EngineError> {
        spec.validate().map_err(|e| EngineError::TaskLoad(e.to_string()))?;
        let app = create_app(&spec.app_id)
            .ok_or_else(|| EngineError::TaskLoad(format!("unknown app `{}`", spec.app_id)))?;
        self.install(spec, app);
        Ok(())
    }

    /// Loads a task but drives the given app instead of the registered one.
    pub fn load_task_with_app(&mut self, spec: TaskSpec, app: Box<dyn App>) -> Result<(), EngineError> {
        spec.validate().map_err(|e| EngineError::TaskLoad(e.to_string()))?;
        self.install(spec, app);
        Ok(())
    }

    fn install(&mut self, spec: TaskSpec, app: Box<dyn App>) {
        let now = self.clock.now();
        let mut c = self.core();
        c.advance_sim_to(now);
        c.tracker = GestureTracker::new(spec.gestures);
        c.base_seed = spec.seed;
        c.episodes_started = 0;
        c.app = Some(app);
        c.task = Some(spec);
        c.pending.clear();
        c.unfolded.clear();
        c.event_log.clear();
        c.extras.clear();
        c.last_fetch = None;
        c.last_resolved = None;
        c.last_timing = None;
        c.episode_over = false;
    }

    pub fn task(&self) -> Option<TaskSpec> {
        self.core().task.clone()
    }

    /// Overrides the base of the episode seed sequence; the next reset uses
    /// `seed`, the one after `seed + 1`, and so on.
    pub fn set_seed(&mut self, seed: u64) {
        let mut c = self.core();
        c.base_seed = seed;
        c.episodes_started = 0;
    }

    pub fn reset(&mut self) -> Result<TimeStep, EngineError> {
        let now = self.clock.now();
        self.core().reset_at(now)
    }

    /// Applies `actions`, waits for the pacing period, and returns the next
    /// observation. A step after the final step of an episode starts a new one.
    pub fn step(&mut self, actions: &[RawAction]) -> Result<TimeStep, EngineError> {
        let (t_call, wait) = {
            let mut c = self.core();
            if c.last_fetch.is_some() && c.episode_over {
                for (index, a) in actions.iter().enumerate() {
                    validate_action(a).map_err(|source| EngineError::InvalidAction { index, source })?;
                }
                let now = self.clock.now();
                return c.reset_at(now);
            }
            let t_call = self.clock.now();
            c.begin_step(actions, t_call)?;
            let last = c.last_fetch.expect("checked by begin_step");
            (t_call, compute_wait(last, t_call, c.config.max_steps_per_second))
        };
        match self.clock.mode() {
            ClockMode::Realtime => self.clock.wait_until(t_call + wait),
            ClockMode::Virtual => self.clock.advance(wait)?,
        }
        let t_fetch = self.clock.now();
        Ok(self.core().finish_step(t_call, t_fetch))
    }

    /// Re-executes a step at recorded clock readings. Virtual clock only.
    pub fn replay_step(
        &mut self,
        actions: &[RawAction],
        call_us: Micros,
        fetch_us: Micros,
    ) -> Result<TimeStep, EngineError> {
        self.require_virtual()?;
        if fetch_us < call_us {
            return Err(ClockError::Backwards {
                now: call_us,
                target: fetch_us,
            }
            .into());
        }
        self.clock.advance_to(call_us)?;
        let mut c = self.core();
        if c.last_fetch.is_some() && c.episode_over {
            return c.reset_at(call_us);
        }
        c.begin_step(actions, call_us)?;
        drop(c);
        self.clock.advance_to(fetch_us)?;
        Ok(self.core().finish_step(call_us, fetch_us))
    }

    /// Re-executes a reset at a recorded clock reading. Virtual clock only.
    pub fn replay_reset(&mut self, at_us: Micros) -> Result<TimeStep, EngineError> {
        self.require_virtual()?;
        self.clock.advance_to(at_us)?;
        self.core().reset_at(at_us)
    }

    /// Lets virtual time pass without any agent input, as agent deliberation
    /// would.
    pub fn advance(&mut self, d: Micros) -> Result<(), EngineError> {
        self.require_virtual()?;
        self.clock.advance(d)?;
        Ok(())
    }

    fn require_virtual(&self) -> Result<(), EngineError> {
        if self.clock.mode() == ClockMode::Virtual {
            Ok(())
        } else {
            Err(EngineError::NotVirtual)
        }
    }

    /// Task extras accumulated since the previous request.
    pub fn request_extras(&mut self) -> Result<ExtrasMap, EngineError> {
        let mut c = self.core();
        let task = c
            .task
            .clone()
            .ok_or_else(|| EngineError::TaskLoad("no task loaded".into()))?;
        Ok(c.extras.request(&task)?)
    }

    /// App events of the current episode, in delivery order.
    pub fn episode_events(&self) -> Vec<AppEvent> {
        self.core().event_log.clone()
    }

    pub fn last_step_timing(&self) -> Option<StepTiming> {
        self.core().last_timing
    }

    pub fn is_started(&self) -> bool {
        self.core().last_fetch.is_some()
    }

    pub fn episode_over(&self) -> bool {
        self.core().episode_over
    }

    /// Seed the next reset will relaunch the app with.
    pub fn next_episode_seed(&self) -> u64 {
        let c = self.core();
        c.base_seed.wrapping_add(c.episodes_started)
    }

    pub fn status(&self) -> EngineStatus {
        let c = self.core();
        EngineStatus {
            clock: self.clock.mode(),
            now_us: self.clock.now(),
            task: c.task.as_ref().map(|t| t.id.clone()),
            started: c.last_fetch.is_some(),
            episode_over: c.episode_over,
            episodes: c.episodes_started,
            pending_actions: c.pending.len(),
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if let Some((stop, handle)) = self.ticker.take() {
            stop.store(true, Ordering::Release);
            let _ = handle.join();
        }
    }
}

fn lock(core: &Mutex<Core>) -> MutexGuard<'_, Core> {
    core.lock().unwrap_or_else(|p| p.into_inner())
}
