use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{extra, raster, App};
use crate::touch::PointerEvent;
use crate::types::{AppEvent, ExtraArray, FrameBuffer, Micros, Point};

/// Vertical position at which a falling ball is scored against the paddle.
pub const CATCH_PADDLE_ROW: f64 = 0.9;
pub const CATCH_PADDLE_HALF_WIDTH: f64 = 0.1;
/// Fall speed in unit heights per second.
pub const CATCH_BALL_SPEED: f64 = 0.5;

const BALL_RADIUS: f64 = 0.04;
const SPAWN_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CatchState {
    pub ball: Point,
    pub speed: f64,
    pub paddle_x: f64,
    pub paddle_half_width: f64,
}

impl CatchState {
    fn spawn(rng: &mut ChaCha8Rng) -> Point {
        Point::new(rng.gen_range(SPAWN_MARGIN..=1.0 - SPAWN_MARGIN), 0.0)
    }
}

/// Advances the ball by `dt` ending at time `now`. Each arrival at the paddle
/// row scores +1 when the paddle is under the ball and -1 otherwise, then the
/// ball restarts from the top at a random column.
pub fn catch_update(
    s: &mut CatchState,
    now: Micros,
    dt: Micros,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<AppEvent>,
) {
    let start = now.saturating_sub(dt);
    let mut remaining = dt as f64 / 1e6;
    let mut elapsed = 0.0;
    if s.speed <= 0.0 {
        return;
    }
    loop {
        let to_arrival = ((CATCH_PADDLE_ROW - s.ball.y) / s.speed).max(0.0);
        if to_arrival > remaining {
            s.ball.y += s.speed * remaining;
            return;
        }
        remaining -= to_arrival;
        elapsed += to_arrival;
        let t = (start + (elapsed * 1e6).round() as Micros).min(now);
        let caught = (s.ball.x - s.paddle_x).abs() <= s.paddle_half_width;
        events.push(AppEvent::new(t, "score", if caught { 1.0 } else { -1.0 }));
        s.ball = CatchState::spawn(rng);
    }
}

pub struct CatchApp {
    state: CatchState,
    rng: ChaCha8Rng,
    events: Vec<AppEvent>,
}

impl CatchApp {
    pub fn new() -> Self {
        let mut app = Self {
            state: CatchState {
                ball: Point::new(0.5, 0.0),
                speed: CATCH_BALL_SPEED,
                paddle_x: 0.5,
                paddle_half_width: CATCH_PADDLE_HALF_WIDTH,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            events: Vec::new(),
        };
        app.reseed(0);
        app
    }

    pub fn state(&self) -> &CatchState {
        &self.state
    }
}

impl Default for CatchApp {
    fn default() -> Self {
        Self::new()
    }
}

impl App for CatchApp {
    fn id(&self) -> &str {
        "catch"
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state.ball = CatchState::spawn(&mut self.rng);
        self.state.paddle_x = 0.5;
        self.events.clear();
    }

    fn handle_pointer(&mut self, ev: &PointerEvent) {
        if let Some(pos) = ev.position() {
            self.state.paddle_x = pos.x;
        }
    }

    fn update(&mut self, now: Micros, dt: Micros) {
        catch_update(&mut self.state, now, dt, &mut self.rng, &mut self.events);
    }

    fn render(&self, fb: &mut FrameBuffer) {
        raster::clear(fb, [16, 20, 38]);
        raster::fill_rect(
            fb,
            Point::new(self.state.paddle_x, CATCH_PADDLE_ROW + 0.03),
            self.state.paddle_half_width,
            0.012,
            [80, 200, 255],
        );
        raster::fill_circle(fb, self.state.ball, BALL_RADIUS, [245, 200, 60]);
    }

    fn drain_events(&mut self) -> Vec<AppEvent> {
        std::mem::take(&mut self.events)
    }

    fn extras(&self) -> Vec<(String, ExtraArray)> {
        vec![
            extra("ball_pos", vec![self.state.ball.x, self.state.ball.y]),
            extra("paddle_pos", vec![self.state.paddle_x]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(ball: Point, paddle_x: f64, speed: f64) -> CatchState {
        CatchState {
            ball,
            speed,
            paddle_x,
            paddle_half_width: CATCH_PADDLE_HALF_WIDTH,
        }
    }

    #[test]
    fn aligned_arrival_scores_plus_one() {
        let mut s = state(Point::new(0.4, 0.8), 0.4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ev = Vec::new();
        catch_update(&mut s, 1_000_000, 500_000, &mut rng, &mut ev);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].name, "score");
        assert_eq!(ev[0].payload.as_number(), Some(1.0));
        // 0.1 to fall at 0.5/s: arrival 200 ms into the half-second window.
        assert_eq!(ev[0].timestamp, 700_000);
        assert!((s.ball.y - 0.15).abs() < 1e-12);
    }

    #[test]
    fn maximal_miss_scores_minus_one() {
        let mut s = state(Point::new(1.0, 0.85), 0.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ev = Vec::new();
        catch_update(&mut s, 1_000_000, 1_000_000, &mut rng, &mut ev);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].payload.as_number(), Some(-1.0));
    }

    #[test]
    fn linear_motion() {
        let mut s = state(Point::new(0.5, 0.5), 0.5, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ev = Vec::new();
        catch_update(&mut s, 1_000_000, 1_000_000, &mut rng, &mut ev);
        assert!(ev.is_empty());
        assert!((s.ball.y - 0.75).abs() < 1e-12);
    }

    #[test]
    fn every_arrival_scores_exactly_once() {
        let mut s = state(Point::new(0.5, 0.0), 0.5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ev = Vec::new();
        // 10 s in one step covers 5 full falls of 1.8 s plus 1 s.
        catch_update(&mut s, 10_000_000, 10_000_000, &mut rng, &mut ev);
        assert_eq!(ev.len(), 5);
        assert!((s.ball.y - 0.5).abs() < 1e-9);
    }
}
