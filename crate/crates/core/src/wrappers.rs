//! Action and observation wrappers.
//!
//! Wrappers change what the agent sends and sees, never how the engine
//! interprets a raw action: every wrapped action decodes to a `RawAction`
//! before it reaches the engine.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{Engine, EngineError};
use crate::types::{ActionType, ExtrasMap, FrameBuffer, Point, RawAction, TimeStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WrapperError {
    #[error("discrete action {index} outside [0, {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("action type value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("grid must have at least one cell")]
    EmptyGrid,
    #[error("unknown wrapper `{0}`")]
    UnknownWrapper(String),
    #[error("bad parameters for wrapper `{name}`: {reason}")]
    BadParams { name: String, reason: String },
    #[error("{0}")]
    ActionKind(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { cols: 6, rows: 9 }
    }
}

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.cols * self.rows
    }

    /// Number of discrete actions: TOUCH or LIFT on every cell.
    pub fn actions(&self) -> usize {
        2 * self.cells()
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let (row, col) = (cell / self.cols, cell % self.cols);
        Point::new(
            (col as f64 + 0.5) / self.cols as f64,
            (row as f64 + 0.5) / self.rows as f64,
        )
    }

    /// Cell containing `p`; the right and bottom edges belong to the last cell.
    pub fn cell_of(&self, p: Point) -> usize {
        let col = ((p.x * self.cols as f64) as usize).min(self.cols - 1);
        let row = ((p.y * self.rows as f64) as usize).min(self.rows - 1);
        row * self.cols + col
    }

    fn check(&self) -> Result<(), WrapperError> {
        if self.cells() == 0 {
            Err(WrapperError::EmptyGrid)
        } else {
            Ok(())
        }
    }
}

pub fn discrete_to_raw(index: usize, grid: GridSpec) -> Result<RawAction, WrapperError> {
    grid.check()?;
    if index >= grid.actions() {
        return Err(WrapperError::IndexOutOfRange {
            index,
            size: grid.actions(),
        });
    }
    let kind = if index < grid.cells() { ActionType::Touch } else { ActionType::Lift };
    let c = grid.cell_center(index % grid.cells());
    Ok(RawAction::new(kind, c.x, c.y))
}

/// Inverse of [`discrete_to_raw`] for TOUCH and LIFT; REPEAT has no index.
pub fn raw_to_discrete(a: &RawAction, grid: GridSpec) -> Option<usize> {
    let cell = grid.cell_of(a.position());
    match a.action_type {
        ActionType::Touch => Some(cell),
        ActionType::Lift => Some(grid.cells() + cell),
        ActionType::Repeat => None,
    }
}

/// Rounds the type value half up: 0 is TOUCH, 1 is LIFT.
pub fn float_to_raw(type_value: f64, position: Point) -> Result<RawAction, WrapperError> {
    if !(0.0..=1.0).contains(&type_value) {
        return Err(WrapperError::OutOfRange(type_value));
    }
    let kind = if type_value >= 0.5 { ActionType::Lift } else { ActionType::Touch };
    Ok(RawAction::new(kind, position.x, position.y))
}

/// Source pixels feeding one output pixel along an axis, with integer weights.
fn axis_taps(src: usize, dst: usize) -> Vec<(Vec<(usize, u64)>, u64)> {
    (0..dst)
        .map(|o| {
            if dst >= src {
                let i = (2 * o + 1) * src / (2 * dst);
                (vec![(i, 1)], 1)
            } else {
                // Output pixel o covers [o*src, (o+1)*src) in units where each
                // source pixel spans dst units.
                let (lo, hi) = (o * src, (o + 1) * src);
                let taps = (lo / dst..hi.div_ceil(dst))
                    .map(|i| {
                        let overlap = hi.min((i + 1) * dst) - lo.max(i * dst);
                        (i, overlap as u64)
                    })
                    .collect();
                (taps, src as u64)
            }
        })
        .collect()
}

/// Resizes with an area average when shrinking and nearest neighbour when
/// growing, per axis. Averages round half up.
pub fn rescale(pixels: &FrameBuffer, width: usize, height: usize) -> FrameBuffer {
    assert!(width >= 1 && height >= 1, "rescale targets must be positive");
    if pixels.width() == width && pixels.height() == height {
        return pixels.clone();
    }
    let xs = axis_taps(pixels.width(), width);
    let ys = axis_taps(pixels.height(), height);
    let src = pixels.data();
    let sw = pixels.width();
    let mut out = FrameBuffer::new(width, height);
    let data = out.data_mut();
    for (oy, (ytaps, ytotal)) in ys.iter().enumerate() {
        for (ox, (xtaps, xtotal)) in xs.iter().enumerate() {
            let total = ytotal * xtotal;
            let mut acc = [0u64; 3];
            for &(iy, wy) in ytaps {
                for &(ix, wx) in xtaps {
                    let w = wy * wx;
                    let p = (iy * sw + ix) * 3;
                    for c in 0..3 {
                        acc[c] += w * src[p + c] as u64;
                    }
                }
            }
            let q = (oy * width + ox) * 3;
            for c in 0..3 {
                data[q + c] = ((2 * acc[c] + total) / (2 * total)) as u8;
            }
        }
    }
    out
}

/// One-hot cell of the last discrete action followed by a TOUCH bit.
pub fn last_action_overlay(last: Option<usize>, grid: GridSpec) -> Vec<u8> {
    let mut v = vec![0u8; grid.cells() + 1];
    if let Some(index) = last.filter(|&i| i < grid.actions()) {
        v[index % grid.cells()] = 1;
        v[grid.cells()] = u8::from(index < grid.cells());
    }
    v
}

/// One entry of a wrapper stack as written in run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperSpec {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Wrapper {
    DiscreteAction(GridSpec),
    FloatAction,
    ImageRescale { width: usize, height: usize },
    LastAction(GridSpec),
}

fn params<T: serde::de::DeserializeOwned + Default>(spec: &WrapperSpec) -> Result<T, WrapperError> {
    if spec.params.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(spec.params.clone()).map_err(|e| WrapperError::BadParams {
        name: spec.name.clone(),
        reason: e.to_string(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RescaleParams {
    width: usize,
    height: usize,
}

impl Default for RescaleParams {
    fn default() -> Self {
        Self { width: 80, height: 120 }
    }
}

impl Wrapper {
    pub fn from_spec(spec: &WrapperSpec) -> Result<Self, WrapperError> {
        let w = match spec.name.as_str() {
            "discrete_action" => Wrapper::DiscreteAction(params(spec)?),
            "float_action" => {
                let _: Option<()> = None;
                if !(spec.params.is_null() || spec.params == Value::Object(Default::default())) {
                    return Err(WrapperError::BadParams {
                        name: spec.name.clone(),
                        reason: "takes no parameters".into(),
                    });
                }
                Wrapper::FloatAction
            }
            "image_rescale" => {
                let p: RescaleParams = params(spec)?;
                if p.width == 0 || p.height == 0 {
                    return Err(WrapperError::BadParams {
                        name: spec.name.clone(),
                        reason: "width and height must be positive".into(),
                    });
                }
                Wrapper::ImageRescale {
                    width: p.width,
                    height: p.height,
                }
            }
            "last_action" => Wrapper::LastAction(params(spec)?),
            other => return Err(WrapperError::UnknownWrapper(other.to_string())),
        };
        match &w {
            Wrapper::DiscreteAction(g) | Wrapper::LastAction(g) => g.check()?,
            _ => {}
        }
        Ok(w)
    }

    pub fn to_spec(&self) -> WrapperSpec {
        let (name, params) = match self {
            Wrapper::DiscreteAction(g) => ("discrete_action", serde_json::json!({"cols": g.cols, "rows": g.rows})),
            Wrapper::FloatAction => ("float_action", Value::Null),
            Wrapper::ImageRescale { width, height } => {
                ("image_rescale", serde_json::json!({"width": width, "height": height}))
            }
            Wrapper::LastAction(g) => ("last_action", serde_json::json!({"cols": g.cols, "rows": g.rows})),
        };
        WrapperSpec {
            name: name.to_string(),
            params,
        }
    }
}

/// What the agent submits, per action space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentAction {
    Raw(RawAction),
    Discrete { index: usize },
    Float { type_value: f64, x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Raw,
    Discrete { n: usize, grid: GridSpec },
    Float,
}

/// Ordered wrapper list. At most one action wrapper may appear.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WrapperStack {
    wrappers: Vec<Wrapper>,
}

impl WrapperStack {
    pub fn new(wrappers: Vec<Wrapper>) -> Result<Self, WrapperError> {
        let action_wrappers = wrappers
            .iter()
            .filter(|w| matches!(w, Wrapper::DiscreteAction(_) | Wrapper::FloatAction))
            .count();
        if action_wrappers > 1 {
            return Err(WrapperError::BadParams {
                name: "stack".into(),
                reason: "at most one action wrapper".into(),
            });
        }
        Ok(Self { wrappers })
    }

    pub fn from_specs(specs: &[WrapperSpec]) -> Result<Self, WrapperError> {
        Self::new(specs.iter().map(Wrapper::from_spec).collect::<Result<_, _>>()?)
    }

    /// Parses a JSON array of `{name, params}` objects.
    pub fn from_json(text: &str) -> Result<Self, WrapperError> {
        let specs: Vec<WrapperSpec> = serde_json::from_str(text).map_err(|e| WrapperError::BadParams {
            name: "stack".into(),
            reason: e.to_string(),
        })?;
        Self::from_specs(&specs)
    }

    pub fn specs(&self) -> Vec<WrapperSpec> {
        self.wrappers.iter().map(Wrapper::to_spec).collect()
    }

    pub fn wrappers(&self) -> &[Wrapper] {
        &self.wrappers
    }

    pub fn action_space(&self) -> ActionSpace {
        for w in &self.wrappers {
            match w {
                Wrapper::DiscreteAction(g) => return ActionSpace::Discrete { n: g.actions(), grid: *g },
                Wrapper::FloatAction => return ActionSpace::Float,
                _ => {}
            }
        }
        ActionSpace::Raw
    }

    /// Translates an agent action to the raw action the engine receives.
    pub fn decode(&self, a: &AgentAction) -> Result<RawAction, WrapperError> {
        match (self.action_space(), a) {
            (ActionSpace::Raw, AgentAction::Raw(r)) => Ok(*r),
            (ActionSpace::Discrete { grid, .. }, AgentAction::Discrete { index }) => discrete_to_raw(*index, grid),
            (ActionSpace::Float, AgentAction::Float { type_value, x, y }) => float_to_raw(*type_value, Point::new(*x, *y)),
            (space, a) => Err(WrapperError::ActionKind(format!("{a:?} does not fit the {space:?} action space"))),
        }
    }

    fn overlay_grid(&self) -> Option<GridSpec> {
        self.wrappers.iter().find_map(|w| match w {
            Wrapper::LastAction(g) => Some(*g),
            _ => None,
        })
    }

    fn transform_pixels(&self, ts: &mut TimeStep) {
        for w in &self.wrappers {
            if let Wrapper::ImageRescale { width, height } = w {
                ts.observation.pixels = rescale(&ts.observation.pixels, *width, *height);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrappedStep {
    pub timestep: TimeStep,
    /// Present when the stack contains `last_action`.
    pub last_action: Option<Vec<u8>>,
}

/// An engine behind a wrapper stack.
pub struct WrappedEnv {
    engine: Engine,
    stack: WrapperStack,
    last: Option<usize>,
}

impl WrappedEnv {
    pub fn new(engine: Engine, stack: WrapperStack) -> Self {
        Self {
            engine,
            stack,
            last: None,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn into_engine(self) -> Engine {
        self.engine
    }

    pub fn stack(&self) -> &WrapperStack {
        &self.stack
    }

    pub fn action_space(&self) -> ActionSpace {
        self.stack.action_space()
    }

    fn wrap(&self, mut timestep: TimeStep) -> WrappedStep {
        self.stack.transform_pixels(&mut timestep);
        WrappedStep {
            timestep,
            last_action: self.stack.overlay_grid().map(|g| last_action_overlay(self.last, g)),
        }
    }

    pub fn reset(&mut self) -> Result<WrappedStep, WrapperError> {
        let ts = self.engine.reset()?;
        self.last = None;
        Ok(self.wrap(ts))
    }

    pub fn step(&mut self, actions: &[AgentAction]) -> Result<WrappedStep, WrapperError> {
        let raw = actions
            .iter()
            .map(|a| self.stack.decode(a))
            .collect::<Result<Vec<_>, _>>()?;
        let ts = self.engine.step(&raw)?;
        if ts.is_first() {
            self.last = None;
        } else if let Some(g) = self.stack.overlay_grid() {
            let grid = match self.stack.action_space() {
                ActionSpace::Discrete { grid, .. } => grid,
                _ => g,
            };
            for (a, r) in actions.iter().zip(&raw) {
                let index = match a {
                    AgentAction::Discrete { index } => Some(*index),
                    _ => raw_to_discrete(r, grid),
                };
                if index.is_some() {
                    self.last = index;
                }
            }
        }
        Ok(self.wrap(ts))
    }

    pub fn request_extras(&mut self) -> Result<ExtrasMap, WrapperError> {
        Ok(self.engine.request_extras()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::tasks::TaskRegistry;
    use proptest::prelude::*;

    const G: GridSpec = GridSpec { cols: 6, rows: 9 };

    #[test]
    fn discrete_examples() {
        assert_eq!(discrete_to_raw(0, G).unwrap(), RawAction::touch(1.0 / 12.0, 1.0 / 18.0));
        assert_eq!(
            discrete_to_raw(54, G).unwrap(),
            RawAction::new(ActionType::Lift, 1.0 / 12.0, 1.0 / 18.0)
        );
        assert_eq!(
            discrete_to_raw(108, G),
            Err(WrapperError::IndexOutOfRange { index: 108, size: 108 })
        );
    }

    #[test]
    fn discrete_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..108 {
            let r = discrete_to_raw(i, G).unwrap();
            assert!(seen.insert((r.action_type, G.cell_of(r.position()))));
            assert_eq!(raw_to_discrete(&r, G), Some(i));
        }
        assert_eq!(seen.len(), 108);
    }

    #[test]
    fn float_examples() {
        let p = Point::new(0.3, 0.3);
        assert_eq!(float_to_raw(0.4, p).unwrap(), RawAction::touch(0.3, 0.3));
        assert_eq!(
            float_to_raw(0.5, p).unwrap(),
            RawAction::new(ActionType::Lift, 0.3, 0.3)
        );
        assert_eq!(float_to_raw(1.2, p), Err(WrapperError::OutOfRange(1.2)));
        assert!(float_to_raw(f64::NAN, p).is_err());
    }

    #[test]
    fn rescale_examples() {
        let red = FrameBuffer::filled(240, 360, [255, 0, 0]);
        assert_eq!(rescale(&red, 80, 120), FrameBuffer::filled(80, 120, [255, 0, 0]));

        let mut checker = FrameBuffer::new(2, 2);
        checker.set_pixel(0, 0, [255, 255, 255]);
        checker.set_pixel(1, 1, [255, 255, 255]);
        assert_eq!(rescale(&checker, 1, 1).pixel(0, 0), [128, 128, 128]);
    }

    #[test]
    fn rescale_upsamples_by_nearest_neighbour() {
        let mut f = FrameBuffer::new(2, 1);
        f.set_pixel(1, 0, [9, 9, 9]);
        let up = rescale(&f, 4, 2);
        let row: Vec<u8> = (0..4).map(|x| up.pixel(x, 1)[0]).collect();
        assert_eq!(row, vec![0, 0, 9, 9]);
    }

    #[test]
    fn rescale_fractional_ratio_matches_area_oracle() {
        // 3 -> 2 pixels: output 0 covers source 0 fully and half of source 1.
        let f = FrameBuffer::from_raw(3, 1, vec![30, 30, 30, 60, 60, 60, 90, 90, 90]).unwrap();
        let out = rescale(&f, 2, 1);
        assert_eq!(out.pixel(0, 0)[0], 40);
        assert_eq!(out.pixel(1, 0)[0], 80);
    }

    #[test]
    fn overlay_examples() {
        let v = last_action_overlay(Some(0), G);
        assert_eq!(v.len(), 55);
        assert_eq!((v[0], v[54], v.iter().map(|&b| b as u32).sum::<u32>()), (1, 1, 2));
        assert_eq!(last_action_overlay(None, G), vec![0; 55]);
        let v = last_action_overlay(Some(54), G);
        assert_eq!((v[0], v[54]), (1, 0));
    }

    #[test]
    fn stack_parsing() {
        let s = WrapperStack::from_json(
            r#"[{"name":"discrete_action"},{"name":"image_rescale","params":{"width":80,"height":120}},{"name":"last_action"}]"#,
        )
        .unwrap();
        assert_eq!(s.action_space(), ActionSpace::Discrete { n: 108, grid: G });
        assert_eq!(WrapperStack::from_specs(&s.specs()).unwrap(), s);
        assert!(matches!(
            WrapperStack::from_json(r#"[{"name":"gym"}]"#),
            Err(WrapperError::UnknownWrapper(_))
        ));
        assert!(WrapperStack::from_json(r#"[{"name":"discrete_action"},{"name":"float_action"}]"#).is_err());
        assert!(WrapperStack::from_json(r#"[{"name":"image_rescale","params":{"width":0,"height":3}}]"#).is_err());
    }

    #[test]
    fn wrapped_env_transforms_observations() {
        let mut e = Engine::virtual_engine(EngineConfig {
            max_steps_per_second: Some(10.0),
            ..Default::default()
        })
        .unwrap();
        e.load_task(TaskRegistry::shipped().get("catch_default").unwrap().clone()).unwrap();
        let stack = WrapperStack::from_json(
            r#"[{"name":"discrete_action"},{"name":"image_rescale"},{"name":"last_action"}]"#,
        )
        .unwrap();
        let mut env = WrappedEnv::new(e, stack);
        let first = env.reset().unwrap();
        assert_eq!(first.timestep.observation.pixels.width(), 80);
        assert_eq!(first.last_action, Some(vec![0; 55]));
        let ts = env.step(&[AgentAction::Discrete { index: 60 }]).unwrap();
        let v = ts.last_action.unwrap();
        assert_eq!((v[6], v[54]), (1, 0));
        assert!(env.step(&[AgentAction::Raw(RawAction::lift())]).is_err());
    }

    proptest! {
        #[test]
        fn rescale_output_dims(w in 1usize..40, h in 1usize..40, tw in 1usize..40, th in 1usize..40, seed in any::<u8>()) {
            let data: Vec<u8> = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(seed | 1)).collect();
            let f = FrameBuffer::from_raw(w, h, data).unwrap();
            let out = rescale(&f, tw, th);
            prop_assert_eq!((out.width(), out.height()), (tw, th));
            prop_assert!(out.is_consistent());
        }

        #[test]
        fn rescale_fixed_point(w in 1usize..30, h in 1usize..30, c in any::<[u8; 3]>()) {
            let f = FrameBuffer::filled(w, h, c);
            prop_assert_eq!(rescale(&f, w, h), f.clone());
            prop_assert_eq!(rescale(&f, (w / 2).max(1), (h / 3).max(1)), FrameBuffer::filled((w / 2).max(1), (h / 3).max(1), c));
        }

        #[test]
        fn float_rounding_rule(v in 0.0f64..=1.0, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let r = float_to_raw(v, Point::new(x, y)).unwrap();
            let expected = if v < 0.5 { ActionType::Touch } else { ActionType::Lift };
            prop_assert_eq!(r.action_type, expected);
            prop_assert_eq!(r.position(), Point::new(x, y));
        }
    }
}
