use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{extra, raster, App};
use crate::touch::PointerEvent;
use crate::types::{AppEvent, ExtraArray, FrameBuffer, Micros, Point};

/// Half extent of the square token, in unit coordinates on both axes.
pub const TOKEN_HALF: f64 = 0.06;
/// Half extent of the square target zone.
pub const TARGET_HALF: f64 = 0.1;

const MIN_SEPARATION: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct DragMatchState {
    pub token: Point,
    /// Where the token snaps back to after a failed drop.
    pub home: Point,
    pub target: Point,
    /// Offset from the pointer to the token center while dragging.
    pub grab: Option<(f64, f64)>,
    pub successes: u32,
}

fn within(a: Point, b: Point, half: f64) -> bool {
    (a.x - b.x).abs() <= half && (a.y - b.y).abs() <= half
}

impl DragMatchState {
    pub fn on_token(&self, p: Point) -> bool {
        within(p, self.token, TOKEN_HALF)
    }

    pub fn in_target(&self, p: Point) -> bool {
        within(p, self.target, TARGET_HALF)
    }

    fn place(&mut self, rng: &mut ChaCha8Rng) {
        self.home = Point::new(rng.gen_range(0.1..=0.9), rng.gen_range(0.1..=0.9));
        loop {
            self.target = Point::new(rng.gen_range(0.15..=0.85), rng.gen_range(0.15..=0.85));
            if self.target.distance(self.home) >= MIN_SEPARATION {
                break;
            }
        }
        self.token = self.home;
        self.grab = None;
    }
}

/// Pointer handling for drag-and-drop: press on the token to pick it up, move
/// to carry it, release with its center inside the target zone to score.
pub fn drag_handle(
    ev: &PointerEvent,
    s: &mut DragMatchState,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<AppEvent>,
) {
    match *ev {
        PointerEvent::Down { pos, .. } => {
            if s.on_token(pos) {
                s.grab = Some((s.token.x - pos.x, s.token.y - pos.y));
            }
        }
        PointerEvent::Move { pos, .. } => {
            if let Some((ox, oy)) = s.grab {
                s.token = Point::new((pos.x + ox).clamp(0.0, 1.0), (pos.y + oy).clamp(0.0, 1.0));
            }
        }
        PointerEvent::Up { t } => {
            if s.grab.take().is_some() {
                if s.in_target(s.token) {
                    s.successes += 1;
                    events.push(AppEvent::new(t, "score", 1.0));
                    s.place(rng);
                } else {
                    s.token = s.home;
                }
            }
        }
    }
}

pub struct DragMatchApp {
    state: DragMatchState,
    rng: ChaCha8Rng,
    events: Vec<AppEvent>,
}

impl DragMatchApp {
    pub fn new() -> Self {
        let mut app = Self {
            state: DragMatchState {
                token: Point::default(),
                home: Point::default(),
                target: Point::default(),
                grab: None,
                successes: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            events: Vec::new(),
        };
        app.reseed(0);
        app
    }

    pub fn state(&self) -> &DragMatchState {
        &self.state
    }
}

impl Default for DragMatchApp {
    fn default() -> Self {
        Self::new()
    }
}

impl App for DragMatchApp {
    fn id(&self) -> &str {
        "drag_match"
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state.successes = 0;
        self.state.place(&mut self.rng);
        self.events.clear();
    }

    fn handle_pointer(&mut self, ev: &PointerEvent) {
        drag_handle(ev, &mut self.state, &mut self.rng, &mut self.events);
    }

    fn update(&mut self, _now: Micros, _dt: Micros) {}

    fn render(&self, fb: &mut FrameBuffer) {
        raster::clear(fb, [34, 34, 34]);
        raster::fill_rect(fb, self.state.target, TARGET_HALF, TARGET_HALF, [70, 90, 150]);
        let color = if self.state.grab.is_some() { [255, 150, 90] } else { [230, 110, 60] };
        raster::fill_rect(fb, self.state.token, TOKEN_HALF, TOKEN_HALF, color);
    }

    fn drain_events(&mut self) -> Vec<AppEvent> {
        std::mem::take(&mut self.events)
    }

    fn extras(&self) -> Vec<(String, ExtraArray)> {
        vec![
            extra("token_pos", vec![self.state.token.x, self.state.token.y]),
            extra("target_pos", vec![self.state.target.x, self.state.target.y]),
        ]
    }
}
