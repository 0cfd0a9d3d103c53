//! Built-in touchscreen apps.
//!
//! Every app is a deterministic state machine: it consumes pointer events and
//! gestures, advances under the engine's tick clock, renders flat-color frames,
//! and reports what happened only through [`AppEvent`]s and extras.

mod button;
mod catch;
mod drag_match;
pub mod raster;
mod slide_2048;

pub use button::{button_handle, ButtonApp, ButtonState, BUTTON_HALF_H, BUTTON_HALF_W};
pub use catch::{catch_update, CatchApp, CatchState, CATCH_BALL_SPEED, CATCH_PADDLE_HALF_WIDTH, CATCH_PADDLE_ROW};
pub use drag_match::{drag_handle, DragMatchApp, DragMatchState, TARGET_HALF, TOKEN_HALF};
pub use slide_2048::{board_apply_swipe, merge_line, Board2048, Slide2048App};

use crate::touch::{Gesture, PointerEvent};
use crate::types::{AppEvent, ExtraArray, FrameBuffer, Micros};

/// Registry ids of the built-in apps.
pub const APP_IDS: [&str; 4] = ["catch", "press_button", "slide_2048", "drag_match"];

pub trait App: Send {
    fn id(&self) -> &str;

    /// Relaunches the app: discards all state and starts over from `seed`.
    fn reseed(&mut self, seed: u64);

    fn handle_pointer(&mut self, _ev: &PointerEvent) {}

    fn handle_gesture(&mut self, _g: &Gesture, _now: Micros) {}

    /// Advances the simulation by `dt`, ending at simulation time `now`.
    fn update(&mut self, now: Micros, dt: Micros);

    /// Draws the current state. Must not change state.
    fn render(&self, fb: &mut FrameBuffer);

    fn drain_events(&mut self) -> Vec<AppEvent>;

    /// Snapshot of the app's numeric state summaries.
    fn extras(&self) -> Vec<(String, ExtraArray)>;
}

pub fn create_app(id: &str) -> Option<Box<dyn App>> {
    Some(match id {
        "catch" => Box::new(CatchApp::new()),
        "press_button" => Box::new(ButtonApp::new()),
        "slide_2048" => Box::new(Slide2048App::new()),
        "drag_match" => Box::new(DragMatchApp::new()),
        _ => return None,
    })
}

pub fn is_registered(id: &str) -> bool {
    APP_IDS.contains(&id)
}

pub(crate) fn extra(key: &str, data: Vec<f64>) -> (String, ExtraArray) {
    let shape = vec![data.len()];
    (key.to_owned(), ExtraArray { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::touch::GestureConfig;
    use crate::types::{Point, RawAction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registry_resolves_every_id() {
        for id in APP_IDS {
            let app = create_app(id).unwrap();
            assert_eq!(app.id(), id);
        }
        assert!(create_app("chess").is_none());
    }

    /// Drives an app with a random timed pointer stream and returns the
    /// event log plus the final frame.
    fn drive(id: &str, seed: u64, stream_seed: u64) -> (Vec<AppEvent>, FrameBuffer) {
        let mut app = create_app(id).unwrap();
        app.reseed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let mut tracker = crate::touch::GestureTracker::new(GestureConfig::default());
        let mut events = Vec::new();
        let tick = 16_667;
        let mut now = 0;
        for _ in 0..600 {
            now += tick;
            app.update(now, tick);
            if let Some(g) = tracker.poll(now) {
                app.handle_gesture(&g, now);
            }
            let a = if rng.gen_bool(0.6) {
                RawAction::touch(rng.gen(), rng.gen())
            } else {
                RawAction::lift()
            };
            if let Some(ev) = crate::touch::to_pointer(&a, tracker.is_down(), now) {
                app.handle_pointer(&ev);
                if let Some(g) = tracker.feed(&ev).unwrap() {
                    app.handle_gesture(&g, now);
                }
            }
            events.extend(app.drain_events());
        }
        let mut fb = FrameBuffer::new(240, 360);
        app.render(&mut fb);
        (events, fb)
    }

    #[test]
    fn apps_are_deterministic_per_seed() {
        for id in APP_IDS {
            let a = drive(id, 11, 5);
            let b = drive(id, 11, 5);
            assert_eq!(a, b, "{id} diverged");
            for w in a.0.windows(2) {
                assert!(w[0].timestamp <= w[1].timestamp);
            }
        }
    }

    #[test]
    fn render_is_pure() {
        for id in APP_IDS {
            let mut app = create_app(id).unwrap();
            app.reseed(3);
            app.update(50_000, 50_000);
            let mut f1 = FrameBuffer::new(240, 360);
            let mut f2 = FrameBuffer::filled(240, 360, [1, 2, 3]);
            app.render(&mut f1);
            app.render(&mut f2);
            assert_eq!(f1, f2, "{id}");
            assert!(f1.is_consistent());
        }
    }

    #[test]
    fn extras_have_declared_shapes() {
        for id in APP_IDS {
            let mut app = create_app(id).unwrap();
            app.reseed(1);
            for (key, arr) in app.extras() {
                assert_eq!(arr.shape.iter().product::<usize>(), arr.data.len(), "{id}/{key}");
            }
        }
        let mut app = create_app("catch").unwrap();
        app.reseed(1);
        let keys: Vec<_> = app.extras().into_iter().map(|(k, a)| (k, a.shape)).collect();
        assert_eq!(
            keys,
            vec![("ball_pos".to_owned(), vec![2]), ("paddle_pos".to_owned(), vec![1])]
        );
        let _ = Point::default();
    }
}
