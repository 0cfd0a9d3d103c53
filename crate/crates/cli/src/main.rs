use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use touchboard::agents::{evaluate, run_episode, EvalSetup, PolicyKind, CSV_HEADER};
use touchboard::net::{Server, ServerConfig, DEFAULT_PORT};
use touchboard::recording::{replay, Recorder, Recording, ReplayOutcome};
use touchboard::wrappers::{WrappedEnv, WrapperStack};
use touchboard::{Clock, ClockMode, Engine, EngineConfig, TaskRegistry};

#[derive(Parser)]
#[command(name = "touchboard", version, about = "Real-time touchscreen environments for RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve an environment over the wire protocol.
    Serve(ServeArgs),
    /// List the available task ids.
    ListTasks,
    /// Evaluate a baseline policy and print the report as JSON.
    Run(RunArgs),
    /// Evaluate every policy on every task and write a CSV table.
    Benchmark(BenchArgs),
    /// Run a policy session and save it as a recording.
    Record(RecordArgs),
    /// Re-drive a recording on a virtual clock and check that it matches.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// Step rate cap; 0 disables pacing.
    #[arg(long, default_value_t = 10.0)]
    max_steps_per_second: f64,
    #[arg(long, default_value_t = 60)]
    tick_hz: u32,
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig {
            max_steps_per_second: (self.max_steps_per_second > 0.0).then_some(self.max_steps_per_second),
            tick_hz: self.tick_hz,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Task to load at startup.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value = "real")]
    clock: ClockMode,
    #[command(flatten)]
    engine: EngineArgs,
    /// Directory with the browser client to serve over HTTP.
    #[arg(long)]
    ui: Option<PathBuf>,
    /// Where CONTROL record_start writes relative paths.
    #[arg(long, default_value = ".")]
    recordings_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "random")]
    policy: PolicyKind,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra seeds; with this set, `--seed` is ignored.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Wrapper stack as JSON, or `@path` to a JSON file.
    #[arg(long)]
    wrappers: Option<String>,
    /// Virtual agent thinking time before each step.
    #[arg(long, default_value_t = 0)]
    deliberation_ms: u64,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// `quick` (1 seed x 2 episodes) or `full` (4 seeds x 20 episodes).
    #[arg(long, default_value = "quick")]
    suite: String,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    task: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "random")]
    policy: PolicyKind,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "virtual")]
    clock: ClockMode,
    /// Store a frame every n steps.
    #[arg(long, default_value_t = 1)]
    frame_every: u32,
    #[arg(long)]
    wrappers: Option<String>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn wrapper_stack(arg: Option<&str>) -> Result<WrapperStack> {
    let Some(arg) = arg else { return Ok(WrapperStack::default()) };
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
        None => arg.to_string(),
    };
    Ok(WrapperStack::from_json(&text)?)
}

fn serve(args: ServeArgs) -> Result<()> {
    let registry = TaskRegistry::from_env()?;
    if let Some(dir) = &args.ui {
        if !dir.is_dir() {
            bail!("UI directory {} does not exist", dir.display());
        }
    }
    let cfg = ServerConfig {
        bind: SocketAddr::new(args.host, args.port),
        clock: args.clock,
        engine: args.engine.config(),
        task: args.task,
        ui_dir: args.ui,
        recordings_dir: args.recordings_dir,
    };
    let server = Server::bind(cfg, registry)?;
    eprintln!("touchboard listening on {}", server.local_addr());
    server.run()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let registry = TaskRegistry::from_env()?;
    let mut setup = EvalSetup::new(registry.get(&args.task)?.clone());
    setup.engine = args.engine.config();
    setup.wrappers = wrapper_stack(args.wrappers.as_deref())?;
    setup.deliberation_us = args.deliberation_ms * 1000;
    let seeds = if args.seeds.is_empty() { vec![args.seed] } else { args.seeds };
    let report = evaluate(args.policy, &setup, args.episodes, &seeds)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn benchmark(args: BenchArgs) -> Result<()> {
    let (seeds, episodes): (Vec<u64>, usize) = match args.suite.as_str() {
        "quick" => (vec![0], 2),
        "full" => (vec![0, 1, 2, 3], 20),
        other => bail!("unknown suite `{other}` (expected quick or full)"),
    };
    let registry = TaskRegistry::from_env()?;
    let mut rows = vec![CSV_HEADER.to_string()];
    for id in registry.ids() {
        let task = registry.get(&id)?.clone();
        for policy in [PolicyKind::Random, PolicyKind::Scripted] {
            // The scripted oracle only knows how to play catch.
            if policy == PolicyKind::Scripted && task.app_id != "catch" {
                continue;
            }
            let mut setup = EvalSetup::new(task.clone());
            setup.engine = args.engine.config();
            let report = evaluate(policy, &setup, episodes, &seeds)?;
            eprintln!("{id} {policy}: {:.3} +- {:.3}", report.mean_return, report.stderr);
            rows.push(report.csv_row());
        }
    }
    let csv = rows.join("\n") + "\n";
    match args.out {
        Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn record(args: RecordArgs) -> Result<()> {
    if args.episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let registry = TaskRegistry::from_env()?;
    let mut engine = Engine::new(args.engine.config(), Clock::new(args.clock))?;
    engine.load_task(registry.get(&args.task)?.clone())?;
    engine.set_seed(args.seed);
    let stack = wrapper_stack(args.wrappers.as_deref())?;
    let header = Recorder::header_for(&engine, stack.specs(), &args.policy.to_string(), args.frame_every)
        .expect("task is loaded");
    let mut recorder = Recorder::new(header);
    let mut env = WrappedEnv::new(engine, stack);
    let mut policy = args.policy.build(env.action_space(), args.seed);
    let mut total = 0.0;
    for _ in 0..args.episodes {
        let r = run_episode(&mut env, policy.as_mut(), 0, usize::MAX, &mut |engine, ts, actions| {
            recorder.observe(ts, engine.last_step_timing().expect("step just ran"), actions);
        })?;
        total += r.ret;
    }
    let steps = recorder.len();
    recorder.finish().write_to(&args.out)?;
    println!(
        "{}",
        serde_json::json!({"out": args.out.display().to_string(), "steps": steps, "episodes": args.episodes, "return": total})
    );
    Ok(())
}

fn replay_cmd(args: ReplayArgs) -> Result<ExitCode> {
    let rec = Recording::read_from(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    match replay(&rec)? {
        ReplayOutcome::Match { .. } => {
            println!("MATCH");
            Ok(ExitCode::SUCCESS)
        }
        ReplayOutcome::Mismatch { step, reason } => {
            println!("MISMATCH at step {step}: {reason}");
            Ok(ExitCode::from(1))
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve(a) => serve(a)?,
        Command::ListTasks => {
            for id in TaskRegistry::from_env()?.ids() {
                println!("{id}");
            }
        }
        Command::Run(a) => run(a)?,
        Command::Benchmark(a) => benchmark(a)?,
        Command::Record(a) => record(a)?,
        Command::Replay(a) => return replay_cmd(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
