//! Baseline policies and the evaluation harness.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::CATCH_PADDLE_ROW;
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::tasks::TaskSpec;
use crate::types::{ActionType, ExtrasMap, Micros, RawAction, TimeStep};
use crate::wrappers::{raw_to_discrete, ActionSpace, AgentAction, WrappedEnv, WrappedStep, WrapperError, WrapperStack};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("required extra `{0}` is not available")]
    MissingExtras(String),
    #[error("evaluation needs at least one episode and one seed")]
    NoEpisodes,
    #[error("human and random baselines are equal; normalization is undefined")]
    DegenerateBaseline,
    #[error("episode exceeded {0} steps without ending")]
    Runaway(usize),
    #[error(transparent)]
    Env(#[from] WrapperError),
}

impl From<EngineError> for AgentError {
    fn from(e: EngineError) -> Self {
        AgentError::Env(e.into())
    }
}

pub trait Policy {
    fn id(&self) -> &str;

    /// Whether `act` needs the task extras of the latest step.
    fn needs_extras(&self) -> bool {
        false
    }

    fn act(&mut self, step: &WrappedStep, extras: Option<&ExtrasMap>) -> Result<AgentAction, AgentError>;
}

/// Uniform over the action space, deterministic per seed.
pub struct RandomPolicy {
    space: ActionSpace,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(space: ActionSpace, seed: u64) -> Self {
        Self {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> AgentAction {
        match self.space {
            ActionSpace::Raw => {
                let t = ActionType::ALL[self.rng.gen_range(0..3)];
                AgentAction::Raw(RawAction::new(t, self.rng.gen_range(0.0..=1.0), self.rng.gen_range(0.0..=1.0)))
            }
            ActionSpace::Discrete { n, .. } => AgentAction::Discrete {
                index: self.rng.gen_range(0..n),
            },
            ActionSpace::Float => AgentAction::Float {
                type_value: self.rng.gen_range(0.0..=1.0),
                x: self.rng.gen_range(0.0..=1.0),
                y: self.rng.gen_range(0.0..=1.0),
            },
        }
    }
}

impl Policy for RandomPolicy {
    fn id(&self) -> &str {
        "random"
    }

    fn act(&mut self, _step: &WrappedStep, _extras: Option<&ExtrasMap>) -> Result<AgentAction, AgentError> {
        Ok(self.sample())
    }
}

/// Touches the paddle row under the ball, using the latest `ball_pos` extra.
pub fn scripted_catch(extras: &ExtrasMap) -> Result<RawAction, AgentError> {
    let ball = extras
        .get("ball_pos")
        .and_then(|v| v.last())
        .filter(|a| a.data.len() == 2)
        .ok_or_else(|| AgentError::MissingExtras("ball_pos".into()))?;
    Ok(RawAction::touch(ball.data[0].clamp(0.0, 1.0), CATCH_PADDLE_ROW))
}

pub struct ScriptedCatch {
    space: ActionSpace,
}

impl ScriptedCatch {
    pub fn new(space: ActionSpace) -> Self {
        Self { space }
    }
}

impl Policy for ScriptedCatch {
    fn id(&self) -> &str {
        "scripted"
    }

    fn needs_extras(&self) -> bool {
        true
    }

    fn act(&mut self, _step: &WrappedStep, extras: Option<&ExtrasMap>) -> Result<AgentAction, AgentError> {
        let raw = scripted_catch(extras.ok_or_else(|| AgentError::MissingExtras("ball_pos".into()))?)?;
        Ok(match self.space {
            ActionSpace::Raw => AgentAction::Raw(raw),
            ActionSpace::Discrete { grid, .. } => AgentAction::Discrete {
                index: raw_to_discrete(&raw, grid).expect("touch has an index"),
            },
            ActionSpace::Float => AgentAction::Float {
                type_value: 0.0,
                x: raw.x,
                y: raw.y,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Random,
    Scripted,
}

impl PolicyKind {
    pub fn build(self, space: ActionSpace, seed: u64) -> Box<dyn Policy> {
        match self {
            PolicyKind::Random => Box::new(RandomPolicy::new(space, seed)),
            PolicyKind::Scripted => Box::new(ScriptedCatch::new(space)),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Random => "random",
            PolicyKind::Scripted => "scripted",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "scripted" => Ok(PolicyKind::Scripted),
            other => Err(format!("unknown policy `{other}` (expected random or scripted)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeResult {
    pub ret: f64,
    pub steps: usize,
}

/// Runs one episode from reset to the final step. `observe` sees every
/// timestep with the raw actions that produced it.
pub fn run_episode(
    env: &mut WrappedEnv,
    policy: &mut dyn Policy,
    deliberation: Micros,
    max_steps: usize,
    observe: &mut dyn FnMut(&Engine, &TimeStep, &[RawAction]),
) -> Result<EpisodeResult, AgentError> {
    let mut step = env.reset()?;
    observe(env.engine(), &step.timestep, &[]);
    let mut result = EpisodeResult { ret: 0.0, steps: 0 };
    while !step.timestep.is_last() {
        if result.steps >= max_steps {
            return Err(AgentError::Runaway(max_steps));
        }
        let extras = if policy.needs_extras() {
            Some(env.request_extras()?)
        } else {
            None
        };
        let action = policy.act(&step, extras.as_ref())?;
        let raw = env.stack().decode(&action)?;
        if deliberation > 0 {
            env.engine_mut().advance(deliberation)?;
        }
        step = env.step(&[action])?;
        observe(env.engine(), &step.timestep, &[raw]);
        result.ret += step.timestep.reward;
        result.steps += 1;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub policy: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub stderr: f64,
    pub seeds: Vec<u64>,
    pub mean_episode_steps: f64,
}

pub const CSV_HEADER: &str = "task,policy,mean,stderr,episodes,seeds";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "{},{},{},{},{},{}",
            self.task,
            self.policy,
            self.mean_return,
            self.stderr,
            self.episodes,
            seeds.join(";")
        )
    }
}

/// Mean and standard error of the mean (sample standard deviation).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub task: TaskSpec,
    pub engine: EngineConfig,
    pub wrappers: WrapperStack,
    /// Virtual time the agent spends thinking before each step.
    pub deliberation_us: Micros,
    pub max_steps: usize,
}

impl EvalSetup {
    pub fn new(task: TaskSpec) -> Self {
        Self {
            task,
            engine: EngineConfig {
                max_steps_per_second: Some(10.0),
                ..Default::default()
            },
            wrappers: WrapperStack::default(),
            deliberation_us: 0,
            max_steps: 1_000_000,
        }
    }

    /// A fresh virtual-clock environment whose episode seeds start at `seed`.
    pub fn make_env(&self, seed: u64) -> Result<WrappedEnv, AgentError> {
        let mut engine = Engine::virtual_engine(self.engine.clone())?;
        engine.load_task(self.task.clone())?;
        engine.set_seed(env_seed(seed));
        Ok(WrappedEnv::new(engine, self.wrappers.clone()))
    }
}

/// Base episode seed for evaluation seed `seed`; spaced so that episode
/// sequences of different seeds never overlap in practice.
pub fn env_seed(seed: u64) -> u64 {
    seed.wrapping_mul(1 << 32)
}

/// Runs `episodes` episodes for every seed on a virtual clock.
pub fn evaluate(kind: PolicyKind, setup: &EvalSetup, episodes: usize, seeds: &[u64]) -> Result<EvalReport, AgentError> {
    if episodes == 0 || seeds.is_empty() {
        return Err(AgentError::NoEpisodes);
    }
    let mut returns = Vec::with_capacity(episodes * seeds.len());
    let mut steps = 0usize;
    for &seed in seeds {
        let mut env = setup.make_env(seed)?;
        let mut policy = kind.build(env.action_space(), seed);
        for _ in 0..episodes {
            let r = run_episode(
                &mut env,
                policy.as_mut(),
                setup.deliberation_us,
                setup.max_steps,
                &mut |_, _, _| {},
            )?;
            returns.push(r.ret);
            steps += r.steps;
        }
    }
    let (mean_return, stderr) = mean_stderr(&returns);
    Ok(EvalReport {
        task: setup.task.id.clone(),
        policy: kind.to_string(),
        episodes: returns.len(),
        mean_return,
        stderr,
        seeds: seeds.to_vec(),
        mean_episode_steps: steps as f64 / returns.len() as f64,
    })
}

/// Score on a scale where the random baseline is 0 and the human baseline 1.
pub fn human_normalized(agent: f64, random: f64, human: f64) -> Result<f64, AgentError> {
    if human == random {
        return Err(AgentError::DegenerateBaseline);
    }
    Ok((agent - random) / (human - random))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskRegistry;
    use crate::types::ExtraArray;
    use crate::wrappers::GridSpec;
    use proptest::prelude::*;

    fn extras(ball_x: f64) -> ExtrasMap {
        let mut m = ExtrasMap::new();
        m.insert(
            "ball_pos".into(),
            vec![ExtraArray {
                shape: vec![2],
                data: vec![ball_x, 0.4],
            }],
        );
        m
    }

    #[test]
    fn scripted_examples() {
        assert_eq!(scripted_catch(&extras(0.3)).unwrap(), RawAction::touch(0.3, CATCH_PADDLE_ROW));
        assert!(matches!(scripted_catch(&ExtrasMap::new()), Err(AgentError::MissingExtras(_))));
    }

    #[test]
    fn random_streams_are_seeded() {
        let space = ActionSpace::Discrete {
            n: 108,
            grid: GridSpec::default(),
        };
        let a: Vec<_> = {
            let mut p = RandomPolicy::new(space, 5);
            (0..50).map(|_| p.sample()).collect()
        };
        let b: Vec<_> = {
            let mut p = RandomPolicy::new(space, 5);
            (0..50).map(|_| p.sample()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn random_discrete_is_roughly_uniform() {
        let mut p = RandomPolicy::new(
            ActionSpace::Discrete {
                n: 108,
                grid: GridSpec::default(),
            },
            1,
        );
        let mut counts = [0usize; 108];
        let draws = 108 * 500;
        for _ in 0..draws {
            let AgentAction::Discrete { index } = p.sample() else { unreachable!() };
            counts[index] += 1;
        }
        // Chi-squared with 107 degrees of freedom; 99.9th percentile is about 159.
        let expected = 500.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 159.0, "chi2 {chi2}");
    }

    #[test]
    fn random_raw_covers_all_types() {
        let mut p = RandomPolicy::new(ActionSpace::Raw, 2);
        let mut seen = [0usize; 3];
        for _ in 0..3000 {
            let AgentAction::Raw(r) = p.sample() else { unreachable!() };
            seen[r.action_type.code() as usize] += 1;
            assert!(r.position().in_unit_square());
        }
        assert!(seen.iter().all(|&c| (900..1100).contains(&c)), "{seen:?}");
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(human_normalized(7.0, 2.0, 7.0).unwrap(), 1.0);
        assert_eq!(human_normalized(2.0, 2.0, 7.0).unwrap(), 0.0);
        assert!(matches!(human_normalized(1.0, 3.0, 3.0), Err(AgentError::DegenerateBaseline)));
    }

    #[test]
    fn stderr_conventions() {
        assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let setup = EvalSetup::new(TaskRegistry::shipped().get("catch_default").unwrap().clone());
        assert!(matches!(
            evaluate(PolicyKind::Random, &setup, 0, &[1]),
            Err(AgentError::NoEpisodes)
        ));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut task = TaskRegistry::shipped().get("catch_default").unwrap().clone();
        task.max_episode_seconds = Some(5.0);
        let setup = EvalSetup::new(task);
        let a = evaluate(PolicyKind::Random, &setup, 2, &[3, 4]).unwrap();
        let b = evaluate(PolicyKind::Random, &setup, 2, &[3, 4]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes, 4);
        assert_eq!(a.mean_episode_steps, 50.0);
        assert_eq!(a.csv_row().split(',').count(), 6);
    }

    #[test]
    fn scripted_catches_every_ball_in_a_short_episode() {
        let mut task = TaskRegistry::shipped().get("catch_default").unwrap().clone();
        task.max_episode_seconds = Some(10.0);
        let setup = EvalSetup::new(task);
        let r = evaluate(PolicyKind::Scripted, &setup, 1, &[0]).unwrap();
        // Balls land every 0.9 / 0.5 = 1.8 s.
        assert_eq!(r.mean_return, 5.0);
    }

    proptest! {
        #[test]
        fn normalization_is_affine_invariant(
            a in -1e3f64..1e3, r in -1e3f64..1e3, h in -1e3f64..1e3, c in -1e3f64..1e3, k in 0.01f64..100.0,
        ) {
            prop_assume!((h - r).abs() > 1e-3);
            let base = human_normalized(a, r, h).unwrap();
            let shifted = human_normalized(a + c, r + c, h + c).unwrap();
            let scaled = human_normalized(a * k, r * k, h * k).unwrap();
            let tol = 1e-9 * (1.0 + base.abs());
            prop_assert!((base - shifted).abs() <= tol * 1e3);
            prop_assert!((base - scaled).abs() <= tol);
        }
    }
}
