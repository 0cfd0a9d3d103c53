//! Pointer events and gesture recognition.
//!
//! Resolved raw actions become a single-pointer event stream
//! (`Down`/`Move`/`Up`). A [`GestureTracker`] consumes that stream one event
//! at a time and emits exactly one [`Gesture`] per down..up span. Long presses
//! fire while the pointer is still down, as soon as the hold threshold passes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ActionType, Micros, Point, RawAction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PointerEvent {
    Down { pos: Point, t: Micros },
    Move { pos: Point, t: Micros },
    Up { t: Micros },
}

impl PointerEvent {
    pub fn t(&self) -> Micros {
        match *self {
            PointerEvent::Down { t, .. } | PointerEvent::Move { t, .. } | PointerEvent::Up { t } => t,
        }
    }

    pub fn position(&self) -> Option<Point> {
        match *self {
            PointerEvent::Down { pos, .. } | PointerEvent::Move { pos, .. } => Some(pos),
            PointerEvent::Up { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    /// Dominant-axis direction of a displacement; ties go horizontal.
    pub fn of(dx: f64, dy: f64) -> Direction {
        if dx.abs() >= dy.abs() {
            if dx >= 0.0 {
                Direction::Right
            } else {
                Direction::Left
            }
        } else if dy >= 0.0 {
            Direction::Down
        } else {
            Direction::Up
        }
    }

    pub fn unit(self) -> (f64, f64) {
        match self {
            Direction::Up => (0.0, -1.0),
            Direction::Down => (0.0, 1.0),
            Direction::Left => (-1.0, 0.0),
            Direction::Right => (1.0, 0.0),
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Direction::Left | Direction::Right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Gesture {
    Tap { pos: Point },
    LongPress { pos: Point },
    Swipe { direction: Direction, start: Point, end: Point },
    Drag { path: Vec<Point> },
    Scroll { direction: Direction, magnitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GestureKind {
    Tap,
    LongPress,
    Swipe,
    Drag,
    Scroll,
}

impl Gesture {
    pub fn kind(&self) -> GestureKind {
        match self {
            Gesture::Tap { .. } => GestureKind::Tap,
            Gesture::LongPress { .. } => GestureKind::LongPress,
            Gesture::Swipe { .. } => GestureKind::Swipe,
            Gesture::Drag { .. } => GestureKind::Drag,
            Gesture::Scroll { .. } => GestureKind::Scroll,
        }
    }
}

/// Recognition thresholds. Times in milliseconds, distances in unit-square
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureConfig {
    pub tap_max_ms: u64,
    pub long_press_ms: u64,
    pub tap_slop: f64,
    pub swipe_min_dist: f64,
    pub swipe_max_ms: u64,
    /// Report aligned slow drags as `Scroll` instead of `Drag`.
    pub scroll: bool,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            tap_max_ms: 300,
            long_press_ms: 500,
            tap_slop: 0.02,
            swipe_min_dist: 0.1,
            swipe_max_ms: 700,
            scroll: false,
        }
    }
}

impl GestureConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.tap_max_ms >= self.long_press_ms {
            return Err(format!(
                "tap_max_ms ({}) must be below long_press_ms ({})",
                self.tap_max_ms, self.long_press_ms
            ));
        }
        for (name, v) in [("tap_slop", self.tap_slop), ("swipe_min_dist", self.swipe_min_dist)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.swipe_max_ms == 0 {
            return Err("swipe_max_ms must be positive".into());
        }
        Ok(())
    }

    fn tap_max_us(&self) -> Micros {
        self.tap_max_ms * 1000
    }

    fn long_press_us(&self) -> Micros {
        self.long_press_ms * 1000
    }

    fn swipe_max_us(&self) -> Micros {
        self.swipe_max_ms * 1000
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GestureError {
    #[error("illegal pointer stream: {0}")]
    IllegalStream(String),
    #[error("gesture cannot be realized: {0}")]
    Unrealizable(String),
}

/// Maps a resolved raw action onto the pointer, given whether it is down.
///
/// `Lift` carries no position: two lifts at different positions produce the
/// same event.
pub fn to_pointer(a: &RawAction, pointer_is_down: bool, t: Micros) -> Option<PointerEvent> {
    match (a.action_type, pointer_is_down) {
        (ActionType::Touch, false) => Some(PointerEvent::Down { pos: a.position(), t }),
        (ActionType::Touch, true) => Some(PointerEvent::Move { pos: a.position(), t }),
        (ActionType::Lift, true) => Some(PointerEvent::Up { t }),
        (ActionType::Lift, false) => None,
        (ActionType::Repeat, _) => {
            debug_assert!(false, "to_pointer expects a REPEAT-resolved action");
            None
        }
    }
}

#[derive(Debug, Clone)]
struct Span {
    start_t: Micros,
    last_t: Micros,
    path: Vec<Point>,
    max_disp: f64,
    fired: bool,
}

impl Span {
    fn start(&self) -> Point {
        self.path[0]
    }

    fn end(&self) -> Point {
        *self.path.last().expect("span path is never empty")
    }
}

/// Incremental single-pointer gesture recognizer.
#[derive(Debug, Clone)]
pub struct GestureTracker {
    cfg: GestureConfig,
    span: Option<Span>,
}

impl GestureTracker {
    pub fn new(cfg: GestureConfig) -> Self {
        Self { cfg, span: None }
    }

    pub fn config(&self) -> &GestureConfig {
        &self.cfg
    }

    pub fn is_down(&self) -> bool {
        self.span.is_some()
    }

    pub fn reset(&mut self) {
        self.span = None;
    }

    /// Fires a pending long press if the pointer has been held still for the
    /// threshold as of `now`.
    pub fn poll(&mut self, now: Micros) -> Option<Gesture> {
        let cfg = self.cfg;
        let span = self.span.as_mut()?;
        if !span.fired
            && now.saturating_sub(span.start_t) >= cfg.long_press_us()
            && span.max_disp < cfg.tap_slop
        {
            span.fired = true;
            return Some(Gesture::LongPress { pos: span.start() });
        }
        None
    }

    pub fn feed(&mut self, ev: &PointerEvent) -> Result<Option<Gesture>, GestureError> {
        if let Some(span) = &self.span {
            if ev.t() < span.last_t {
                return Err(GestureError::IllegalStream(format!(
                    "event at {} precedes previous event at {}",
                    ev.t(),
                    span.last_t
                )));
            }
        }
        match *ev {
            PointerEvent::Down { pos, t } => {
                if self.span.is_some() {
                    return Err(GestureError::IllegalStream("DOWN while pointer is down".into()));
                }
                self.span = Some(Span {
                    start_t: t,
                    last_t: t,
                    path: vec![pos],
                    max_disp: 0.0,
                    fired: false,
                });
                Ok(None)
            }
            PointerEvent::Move { pos, t } => {
                if self.span.is_none() {
                    return Err(GestureError::IllegalStream("MOVE while pointer is up".into()));
                }
                let fired = self.poll(t);
                let span = self.span.as_mut().expect("checked above");
                span.max_disp = span.max_disp.max(pos.distance(span.start()));
                span.path.push(pos);
                span.last_t = t;
                Ok(fired)
            }
            PointerEvent::Up { t } => {
                if self.span.is_none() {
                    return Err(GestureError::IllegalStream("UP while pointer is up".into()));
                }
                if let Some(g) = self.poll(t) {
                    self.span = None;
                    return Ok(Some(g));
                }
                let span = self.span.take().expect("checked above");
                if span.fired {
                    return Ok(None);
                }
                Ok(Some(self.classify_span(&span, t - span.start_t)))
            }
        }
    }

    fn classify_span(&self, span: &Span, duration: Micros) -> Gesture {
        let cfg = &self.cfg;
        let start = span.start();
        let end = span.end();
        if span.max_disp < cfg.tap_slop {
            if duration < cfg.tap_max_us() {
                return Gesture::Tap { pos: start };
            }
            if duration >= cfg.long_press_us() {
                return Gesture::LongPress { pos: start };
            }
            return Gesture::Drag {
                path: span.path.clone(),
            };
        }
        let (dx, dy) = (end.x - start.x, end.y - start.y);
        if start.distance(end) >= cfg.swipe_min_dist && duration <= cfg.swipe_max_us() {
            return Gesture::Swipe {
                direction: Direction::of(dx, dy),
                start,
                end,
            };
        }
        if cfg.scroll && is_aligned(&span.path, cfg.tap_slop) {
            let direction = Direction::of(dx, dy);
            let magnitude = if direction.is_horizontal() { dx.abs() } else { dy.abs() };
            if magnitude >= cfg.tap_slop {
                return Gesture::Scroll { direction, magnitude };
            }
        }
        Gesture::Drag {
            path: span.path.clone(),
        }
    }
}

/// A path is aligned when every point stays within `slop` of the start on the
/// axis perpendicular to the net displacement.
fn is_aligned(path: &[Point], slop: f64) -> bool {
    let (start, end) = (path[0], path[path.len() - 1]);
    let horizontal = Direction::of(end.x - start.x, end.y - start.y).is_horizontal();
    path.iter().all(|p| {
        let off = if horizontal { p.y - start.y } else { p.x - start.x };
        off.abs() < slop
    })
}

/// Classifies a complete pointer stream, one gesture per down..up span.
/// A span still open at the end of the stream yields a gesture only if a long
/// press already fired.
pub fn classify(stream: &[PointerEvent], cfg: &GestureConfig) -> Result<Vec<Gesture>, GestureError> {
    let mut tracker = GestureTracker::new(*cfg);
    let mut out = Vec::new();
    for ev in stream {
        if let Some(g) = tracker.feed(ev)? {
            out.push(g);
        }
    }
    Ok(out)
}

/// A raw action scheduled at an offset from the start of a gesture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub t: Micros,
    pub action: RawAction,
}

/// Plays resolved actions through [`to_pointer`], starting with the pointer up.
pub fn pointer_stream(actions: &[TimedAction]) -> Vec<PointerEvent> {
    let mut down = false;
    let mut out = Vec::with_capacity(actions.len());
    for ta in actions {
        if let Some(ev) = to_pointer(&ta.action, down, ta.t) {
            down = !matches!(ev, PointerEvent::Up { .. });
            out.push(ev);
        }
    }
    out
}

/// Builds a raw-action sequence, one action per `step_period`, that the
/// classifier maps back to a gesture of the same kind.
pub fn synthesize(
    g: &Gesture,
    cfg: &GestureConfig,
    step_period: Micros,
) -> Result<Vec<TimedAction>, GestureError> {
    let unrealizable = |msg: String| Err(GestureError::Unrealizable(msg));
    if step_period == 0 {
        return unrealizable("step period must be positive".into());
    }
    let points: Vec<Point> = match g {
        Gesture::Tap { pos } => {
            if step_period >= cfg.tap_max_us() {
                return unrealizable(format!(
                    "tap needs a lift within {} ms but steps are {} us apart",
                    cfg.tap_max_ms, step_period
                ));
            }
            vec![*pos]
        }
        Gesture::LongPress { pos } => {
            let holds = cfg.long_press_us().div_ceil(step_period).max(1) as usize;
            vec![*pos; holds]
        }
        Gesture::Swipe { direction, start, end } => {
            let dist = start.distance(*end);
            if dist < cfg.swipe_min_dist || dist < cfg.tap_slop {
                return unrealizable(format!("swipe distance {dist} is below threshold"));
            }
            if Direction::of(end.x - start.x, end.y - start.y) != *direction {
                return unrealizable("swipe endpoints disagree with its direction".into());
            }
            let budget = cfg.swipe_max_us() / step_period;
            if budget < 2 {
                return unrealizable(format!(
                    "swipe must finish within {} ms but steps are {} us apart",
                    cfg.swipe_max_ms, step_period
                ));
            }
            let moves = (budget - 1).min(4) as usize;
            lerp_path(*start, *end, moves + 1)
        }
        Gesture::Drag { path } => {
            if path.is_empty() {
                return unrealizable("drag path is empty".into());
            }
            if cfg.scroll && path.len() > 1 && is_aligned(path, cfg.tap_slop) {
                return unrealizable("aligned drag reads as a scroll under this config".into());
            }
            let mut pts = path.clone();
            let (first, last) = (pts[0], pts[pts.len() - 1]);
            // A fast drag with a long net displacement would read as a swipe;
            // hold the final point until the swipe window has passed.
            if first.distance(last) >= cfg.swipe_min_dist {
                while (pts.len() as u64) * step_period <= cfg.swipe_max_us() {
                    pts.push(last);
                }
            }
            pts
        }
        Gesture::Scroll { direction, magnitude } => {
            if !cfg.scroll {
                return unrealizable("scroll recognition is disabled".into());
            }
            if !(*magnitude >= cfg.tap_slop && *magnitude <= 0.9) {
                return unrealizable(format!("scroll magnitude {magnitude} out of range"));
            }
            let (ux, uy) = direction.unit();
            let start = Point::new(0.5 - ux * magnitude / 2.0, 0.5 - uy * magnitude / 2.0);
            let end = Point::new(0.5 + ux * magnitude / 2.0, 0.5 + uy * magnitude / 2.0);
            let count = (cfg.swipe_max_us() / step_period + 1).max(2) as usize;
            lerp_path(start, end, count)
        }
    };
    if let Some(p) = points.iter().find(|p| !p.in_unit_square()) {
        return unrealizable(format!("point ({}, {}) is off screen", p.x, p.y));
    }
    if !matches!(g, Gesture::Tap { .. } | Gesture::LongPress { .. }) {
        // The pointer has to leave the slop radius before a long press fires.
        let start = points[0];
        match points.iter().position(|p| p.distance(start) >= cfg.tap_slop) {
            Some(i) if (i as u64) * step_period < cfg.long_press_us() => {}
            _ => return unrealizable("pointer would register a long press first".into()),
        }
    }
    let mut out: Vec<TimedAction> = points
        .iter()
        .enumerate()
        .map(|(i, p)| TimedAction {
            t: i as u64 * step_period,
            action: RawAction::touch(p.x, p.y),
        })
        .collect();
    let last = *points.last().expect("non-empty");
    out.push(TimedAction {
        t: points.len() as u64 * step_period,
        action: RawAction::new(ActionType::Lift, last.x, last.y),
    });
    Ok(out)
}

fn lerp_path(a: Point, b: Point, count: usize) -> Vec<Point> {
    let n = count.max(2) - 1;
    (0..=n)
        .map(|i| {
            let f = i as f64 / n as f64;
            Point::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
        })
        .collect()
}


#[cfg(test)]
mod proptests {
    //! The reference classifier below is written from the threshold table
    //! directly, working over whole spans instead of incrementally.
    use super::*;
    use proptest::prelude::*;

    fn reference_classify(stream: &[PointerEvent], cfg: &GestureConfig) -> Vec<GestureKind> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < stream.len() {
            let PointerEvent::Down { pos: start, t: t0 } = stream[i] else {
                panic!("stream not at a span boundary")
            };
            let mut j = i + 1;
            while j < stream.len() && !matches!(stream[j], PointerEvent::Up { .. }) {
                j += 1;
            }
            let span = &stream[i..=j.min(stream.len() - 1)];
            let closed = j < stream.len();
            let lp = cfg.long_press_ms * 1000;
            // Long press: some event arrives after the threshold while every
            // earlier position stayed within the slop.
            let mut long_press = false;
            for k in 1..span.len() {
                let before_max = span[..k]
                    .iter()
                    .filter_map(|e| e.position())
                    .map(|p| p.distance(start))
                    .fold(0.0, f64::max);
                if span[k].t() - t0 >= lp && before_max < cfg.tap_slop {
                    long_press = true;
                    break;
                }
            }
            if long_press {
                out.push(GestureKind::LongPress);
            } else if closed {
                let positions: Vec<Point> = span.iter().filter_map(|e| e.position()).collect();
                let max_disp = positions.iter().map(|p| p.distance(start)).fold(0.0, f64::max);
                let end = *positions.last().unwrap();
                let dur = span.last().unwrap().t() - t0;
                let kind = if max_disp < cfg.tap_slop && dur < cfg.tap_max_ms * 1000 {
                    GestureKind::Tap
                } else if max_disp < cfg.tap_slop && dur >= lp {
                    GestureKind::LongPress
                } else if max_disp >= cfg.tap_slop
                    && start.distance(end) >= cfg.swipe_min_dist
                    && dur <= cfg.swipe_max_ms * 1000
                {
                    GestureKind::Swipe
                } else {
                    GestureKind::Drag
                };
                out.push(kind);
            }
            i = j + 1;
        }
        out
    }

    /// Legal streams: spans of DOWN, a few MOVEs, UP; positions clustered so
    /// that every threshold gets exercised.
    fn legal_stream() -> impl Strategy<Value = Vec<PointerEvent>> {
        let span = (
            (0.0..=1.0f64, 0.0..=1.0f64),
            proptest::collection::vec(((-0.3..0.3f64, -0.3..0.3f64), 1u64..400), 0..5),
            1u64..900,
            0u64..300,
        );
        proptest::collection::vec(span, 1..5).prop_map(|spans| {
            let mut t = 0;
            let mut out = Vec::new();
            for ((x, y), moves, up_gap, idle) in spans {
                t += idle * 1000;
                out.push(PointerEvent::Down { pos: Point::new(x, y), t });
                for ((dx, dy), gap) in moves {
                    t += gap * 1000;
                    let scale = if gap % 3 == 0 { 0.02 } else { 1.0 };
                    let pos = Point::new((x + dx * scale).clamp(0.0, 1.0), (y + dy * scale).clamp(0.0, 1.0));
                    out.push(PointerEvent::Move { pos, t });
                }
                t += up_gap * 1000;
                out.push(PointerEvent::Up { t });
            }
            out
        })
    }

    proptest! {
        #[test]
        fn matches_reference_classifier(stream in legal_stream()) {
            let cfg = GestureConfig::default();
            let got: Vec<GestureKind> = classify(&stream, &cfg).unwrap().iter().map(Gesture::kind).collect();
            prop_assert_eq!(got, reference_classify(&stream, &cfg));
        }

        #[test]
        fn one_gesture_per_span(stream in legal_stream()) {
            let spans = stream.iter().filter(|e| matches!(e, PointerEvent::Down { .. })).count();
            let got = classify(&stream, &GestureConfig::default()).unwrap();
            prop_assert_eq!(got.len(), spans);
            prop_assert!(got.iter().all(|g| g.kind() != GestureKind::Scroll));
        }

        #[test]
        fn longer_long_press_never_creates_long_press_from_tap(stream in legal_stream(), extra in 1u64..2000) {
            let base = GestureConfig::default();
            let longer = GestureConfig { long_press_ms: base.long_press_ms + extra, ..base };
            let a = classify(&stream, &base).unwrap();
            let b = classify(&stream, &longer).unwrap();
            for (ga, gb) in a.iter().zip(&b) {
                if ga.kind() == GestureKind::Tap {
                    prop_assert_eq!(gb.kind(), GestureKind::Tap);
                }
            }
        }
    }
}
