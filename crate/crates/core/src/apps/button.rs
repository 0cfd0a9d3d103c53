use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{extra, raster, App};
use crate::touch::Gesture;
use crate::types::{AppEvent, ExtraArray, FrameBuffer, Micros, Point};

pub const BUTTON_HALF_W: f64 = 0.1;
pub const BUTTON_HALF_H: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ButtonState {
    pub center: Point,
}

impl ButtonState {
    pub fn contains(&self, p: Point) -> bool {
        (p.x - self.center.x).abs() <= BUTTON_HALF_W && (p.y - self.center.y).abs() <= BUTTON_HALF_H
    }

    fn relocate(&mut self, rng: &mut ChaCha8Rng) {
        self.center = Point::new(
            rng.gen_range(BUTTON_HALF_W..=1.0 - BUTTON_HALF_W),
            rng.gen_range(BUTTON_HALF_H..=1.0 - BUTTON_HALF_H),
        );
    }
}

/// Only a tap inside the button counts; a hit moves the button elsewhere.
pub fn button_handle(
    g: &Gesture,
    s: &mut ButtonState,
    now: Micros,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<AppEvent>,
) {
    if let Gesture::Tap { pos } = g {
        if s.contains(*pos) {
            events.push(AppEvent::new(now, "score", 1.0));
            s.relocate(rng);
        }
    }
}

pub struct ButtonApp {
    state: ButtonState,
    rng: ChaCha8Rng,
    events: Vec<AppEvent>,
    pressed: bool,
}

impl ButtonApp {
    pub fn new() -> Self {
        let mut app = Self {
            state: ButtonState {
                center: Point::new(0.5, 0.5),
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            events: Vec::new(),
            pressed: false,
        };
        app.reseed(0);
        app
    }

    pub fn state(&self) -> &ButtonState {
        &self.state
    }
}

impl Default for ButtonApp {
    fn default() -> Self {
        Self::new()
    }
}

impl App for ButtonApp {
    fn id(&self) -> &str {
        "press_button"
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state.relocate(&mut self.rng);
        self.events.clear();
        self.pressed = false;
    }

    fn handle_pointer(&mut self, ev: &crate::touch::PointerEvent) {
        // Visual feedback only.
        self.pressed = ev.position().is_some_and(|p| self.state.contains(p));
    }

    fn handle_gesture(&mut self, g: &Gesture, now: Micros) {
        button_handle(g, &mut self.state, now, &mut self.rng, &mut self.events);
    }

    fn update(&mut self, _now: Micros, _dt: Micros) {}

    fn render(&self, fb: &mut FrameBuffer) {
        raster::clear(fb, [228, 228, 232]);
        let color = if self.pressed { [20, 110, 60] } else { [40, 170, 90] };
        raster::fill_rect(fb, self.state.center, BUTTON_HALF_W, BUTTON_HALF_H, color);
    }

    fn drain_events(&mut self) -> Vec<AppEvent> {
        std::mem::take(&mut self.events)
    }

    fn extras(&self) -> Vec<(String, ExtraArray)> {
        vec![extra("button_pos", vec![self.state.center.x, self.state.center.y])]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ButtonState, ChaCha8Rng, Vec<AppEvent>) {
        (
            ButtonState {
                center: Point::new(0.5, 0.5),
            },
            ChaCha8Rng::seed_from_u64(4),
            Vec::new(),
        )
    }

    #[test]
    fn tap_at_center_scores_and_moves() {
        let (mut s, mut rng, mut ev) = setup();
        button_handle(&Gesture::Tap { pos: Point::new(0.5, 0.5) }, &mut s, 10, &mut rng, &mut ev);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].payload.as_number(), Some(1.0));
        assert_ne!(s.center, Point::new(0.5, 0.5));
        assert!(s.center.x - BUTTON_HALF_W >= 0.0 && s.center.x + BUTTON_HALF_W <= 1.0);
        assert!(s.center.y - BUTTON_HALF_H >= 0.0 && s.center.y + BUTTON_HALF_H <= 1.0);
    }

    #[test]
    fn tap_elsewhere_is_ignored() {
        let (mut s, mut rng, mut ev) = setup();
        button_handle(&Gesture::Tap { pos: Point::new(1.0, 1.0) }, &mut s, 10, &mut rng, &mut ev);
        assert!(ev.is_empty());
    }

    #[test]
    fn long_press_is_not_a_tap() {
        let (mut s, mut rng, mut ev) = setup();
        button_handle(&Gesture::LongPress { pos: Point::new(0.5, 0.5) }, &mut s, 10, &mut rng, &mut ev);
        assert!(ev.is_empty());
        assert_eq!(s.center, Point::new(0.5, 0.5));
    }

    #[test]
    fn relocation_stays_on_screen() {
        let (mut s, mut rng, _) = setup();
        for _ in 0..1000 {
            s.relocate(&mut rng);
            assert!(s.center.x >= BUTTON_HALF_W && s.center.x <= 1.0 - BUTTON_HALF_W);
            assert!(s.center.y >= BUTTON_HALF_H && s.center.y <= 1.0 - BUTTON_HALF_H);
        }
    }
}
