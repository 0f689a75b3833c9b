//! Command-line front end: train, evaluate, rollout, sweep, plot.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use crowdnav::env::{action_set, CrowdSim, EnvConfig, PolicyMode};
use crowdnav::eval::{
    beta_sweep, evaluate, format_metrics_table, render_trajectory_svg, write_metrics_csv,
    MetricRow, RenderInput, RenderStyle, SweepInput,
};
use crowdnav::rl::{
    rollout_with_policy, step_discount, GreedyValuePolicy, OrcaTeacher, RobotPolicy, TrainConfig,
    TrainSetup, Trainer,
};
use crowdnav::trace;
use crowdnav::valuenet::Checkpoint;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "crowdnav",
    version,
    about = "Crowd-navigation simulator and value-learning stack"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy (imitation bootstrap + reinforcement episodes).
    Train(TrainArgs),
    /// Evaluate a checkpoint over a seeded batch of test cases.
    Evaluate(EvaluateArgs),
    /// Run one greedy episode and export its trajectory (and plot).
    Rollout(RolloutArgs),
    /// Train and evaluate a grid of (beta, crowd size) cells.
    Sweep(SweepArgs),
    /// Render a saved trajectory trace as an SVG plot.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct CommonConfig {
    /// TOML config file with [env] and [train] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of pedestrians (overrides config).
    #[arg(long = "n-humans")]
    n_humans: Option<usize>,
    /// Beep-cost coefficient (overrides config).
    #[arg(long)]
    beta: Option<f64>,
    /// Rollout parallelism. 1 is the bit-reproducible mode.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl CommonConfig {
    fn resolve(&self) -> Result<(EnvConfig, TrainConfig, u64)> {
        let file = config::load_config(self.config.as_deref())?;
        let mut env = file.env;
        let train = file.train;
        if let Some(n) = self.n_humans {
            env.n = n;
        }
        if let Some(b) = self.beta {
            env.beta = b;
        }
        let seed = self.seed.unwrap_or(env.seed);
        env.seed = seed;
        Ok((env, train, seed))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Output directory for manifest, log, and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Action space: sarl (9 actions) or l2b (17 actions).
    #[arg(long, default_value = "l2b")]
    mode: PolicyMode,
    /// Reinforcement episodes (overrides config rl_episodes).
    #[arg(long)]
    episodes: Option<u64>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Model checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of seeded test cases.
    #[arg(long = "n-cases", default_value_t = 500)]
    n_cases: u64,
    /// First episode seed; cases use base_seed..base_seed+n_cases.
    #[arg(long = "base-seed", default_value_t = 100_000)]
    base_seed: u64,
    /// Output directory for metrics.csv and episodes.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Model checkpoint driving the robot.
    #[arg(long, conflicts_with = "policy")]
    checkpoint: Option<PathBuf>,
    /// Scripted baseline policy (`orca`).
    #[arg(long)]
    policy: Option<String>,
    /// Trajectory trace output (JSON lines).
    #[arg(long = "trace-out")]
    trace_out: PathBuf,
    /// Optional SVG plot output.
    #[arg(long = "plot-out")]
    plot_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML config file with [env] and [train] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; per-cell seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Rollout parallelism. 1 is the bit-reproducible mode.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Beep-cost coefficients of the grid.
    #[arg(long, value_delimiter = ',', required = true)]
    betas: Vec<f64>,
    /// Crowd sizes of the grid.
    #[arg(long = "n-humans", value_delimiter = ',', required = true)]
    n_humans: Vec<usize>,
    /// Reinforcement episodes per cell (overrides config rl_episodes).
    #[arg(long)]
    episodes: Option<u64>,
    /// Evaluation cases per cell.
    #[arg(long = "n-cases", default_value_t = 100)]
    n_cases: u64,
    /// First evaluation seed per cell.
    #[arg(long = "base-seed", default_value_t = 100_000)]
    base_seed: u64,
    /// Action space for the cells.
    #[arg(long, default_value = "l2b")]
    mode: PolicyMode,
    /// Fail on missing cell checkpoints instead of training them.
    #[arg(long = "evaluate-only")]
    evaluate_only: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Trajectory trace (JSON lines) produced by `rollout`.
    #[arg(long)]
    trace: PathBuf,
    /// SVG output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    version: u32,
    command: String,
    created_unix: u64,
    seed: u64,
    mode: Option<String>,
    action_space: Option<usize>,
    workers: usize,
    env: EnvConfig,
    train: TrainConfig,
    extra: serde_json::Value,
    artifacts: BTreeMap<String, String>,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Rollout(args) => cmd_rollout(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

/// Trains into `out/`, writing checkpoints every `checkpoint_interval`
/// episodes plus `latest.json` and `final.json` for resumption.
fn cmd_train(args: TrainArgs) -> Result<()> {
    let (env, mut train, seed) = args.common.resolve()?;
    if let Some(episodes) = args.episodes {
        train.rl_episodes = episodes;
    }
    let setup = TrainSetup {
        env,
        train,
        mode: args.mode,
        seed,
    };
    setup.validate()?;

    fs::create_dir_all(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let latest_path = ckpt_dir.join("latest.json");

    let resumed = args.resume && latest_path.exists();
    let mut trainer = if resumed {
        let ckpt = Checkpoint::load(&latest_path)?;
        Trainer::from_checkpoint(setup.clone(), ckpt)?
    } else {
        Trainer::new(setup.clone())?
    };

    let mut artifacts = BTreeMap::new();
    artifacts.insert("train_log".into(), "train_log.jsonl".into());
    artifacts.insert("checkpoints".into(), "checkpoints".into());
    artifacts.insert("final_checkpoint".into(), "checkpoints/final.json".into());
    write_manifest(
        &args.out,
        &RunManifest {
            version: 1,
            command: "train".into(),
            created_unix: now_unix(),
            seed,
            mode: Some(setup.mode.to_string()),
            action_space: Some(action_set(setup.mode).len()),
            workers: args.common.workers,
            env: setup.env.clone(),
            train: setup.train.clone(),
            extra: serde_json::json!({ "resumed": resumed }),
            artifacts,
        },
    )?;

    let log_file = if resumed {
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(args.out.join("train_log.jsonl"))?
    } else {
        fs::File::create(args.out.join("train_log.jsonl"))?
    };
    let mut log = BufWriter::new(log_file);

    if !resumed {
        let report = trainer.bootstrap()?;
        eprintln!(
            "bootstrap: {} episodes, {} samples, loss {:.5} -> {:.5}",
            report.episodes, report.samples, report.first_epoch_loss, report.last_epoch_loss
        );
        trainer.checkpoint().save(&latest_path)?;
    }

    let total = setup.train.rl_episodes;
    let interval = setup.train.checkpoint_interval.max(1);
    while trainer.episodes_done() < total {
        let done = trainer.episodes_done();
        let chunk = (total - done).min(interval - done % interval);
        let mut lines = Vec::with_capacity(chunk as usize);
        trainer.run_episodes(chunk, args.common.workers, &mut |record| {
            lines.push(serde_json::to_string(record).expect("log record serializes"));
        })?;
        for line in &lines {
            writeln!(log, "{line}")?;
        }
        log.flush()?;
        let done = trainer.episodes_done();
        let ckpt = trainer.checkpoint();
        if done % interval == 0 && done < total {
            ckpt.save(&ckpt_dir.join(format!("ckpt_ep{done:06}.json")))?;
        }
        ckpt.save(&latest_path)?;
        eprintln!("episode {done}/{total}");
    }
    trainer.checkpoint().save(&ckpt_dir.join("final.json"))?;
    trainer.checkpoint().save(&latest_path)?;
    eprintln!(
        "trained {} episodes ({} mode), artifacts in {}",
        trainer.episodes_done(),
        setup.mode,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    // Load and validate the checkpoint before creating any output.
    let (net, mode, _) = Checkpoint::load(&args.checkpoint)?.into_net()?;
    let (env, train, seed) = args.common.resolve()?;
    env.validate()?;

    let policy = GreedyValuePolicy {
        value: &net,
        actions: action_set(mode),
        gamma: train.gamma,
    };
    let (row, episodes) = evaluate(
        &policy,
        &env,
        args.n_cases,
        args.base_seed,
        train.gamma,
        args.common.workers,
        false,
        &mode.to_string(),
    )?;

    fs::create_dir_all(&args.out)?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, std::slice::from_ref(&row))?;
    fs::write(args.out.join("metrics.csv"), &csv)?;
    let mut episodes_out = BufWriter::new(fs::File::create(args.out.join("episodes.jsonl"))?);
    for e in &episodes {
        serde_json::to_writer(&mut episodes_out, e)?;
        episodes_out.write_all(b"\n")?;
    }
    episodes_out.flush()?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("metrics".into(), "metrics.csv".into());
    artifacts.insert("episodes".into(), "episodes.jsonl".into());
    write_manifest(
        &args.out,
        &RunManifest {
            version: 1,
            command: "evaluate".into(),
            created_unix: now_unix(),
            seed,
            mode: Some(mode.to_string()),
            action_space: Some(action_set(mode).len()),
            workers: args.common.workers,
            env: env.clone(),
            train,
            extra: serde_json::json!({
                "checkpoint": args.checkpoint.display().to_string(),
                "n_cases": args.n_cases,
                "base_seed": args.base_seed,
            }),
            artifacts,
        },
    )?;

    print!("{}", format_metrics_table(std::slice::from_ref(&row)));
    Ok(())
}

fn cmd_rollout(args: RolloutArgs) -> Result<()> {
    let (env, train, seed) = args.common.resolve()?;
    env.validate()?;
    let mut sim = CrowdSim::new(env.clone(), seed)?;
    let robot_start = sim.robot().position;
    let robot_goal = sim.robot().goal;
    let discount = step_discount(train.gamma, env.dt, env.v_pref);

    let record = match (&args.checkpoint, args.policy.as_deref()) {
        (Some(path), None) => {
            let (net, mode, _) = Checkpoint::load(path)?.into_net()?;
            let policy = GreedyValuePolicy {
                value: &net,
                actions: action_set(mode),
                gamma: train.gamma,
            };
            rollout_with_policy(&mut sim, &policy, discount, true)?
        }
        (None, Some("orca")) => {
            let policy = OrcaTeacher {
                tie_break_rotation: sim.tie_break_rotation(),
            };
            rollout_with_policy(&mut sim, &policy as &dyn RobotPolicy, discount, true)?
        }
        (None, Some(other)) => bail!("unknown policy `{other}` (expected `orca`)"),
        (None, None) => bail!("either --checkpoint or --policy orca is required"),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };

    if let Some(parent) = args.trace_out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut out = BufWriter::new(fs::File::create(&args.trace_out)?);
    trace::write_jsonl(&mut out, &record.trajectory)?;
    out.flush()?;

    if let Some(plot_path) = &args.plot_out {
        let svg = render_trajectory_svg(
            &RenderInput {
                trajectory: &record.trajectory,
                robot_start,
                robot_goal,
            },
            &RenderStyle::default(),
        );
        fs::write(plot_path, svg)?;
    }
    eprintln!(
        "episode seed {}: {:?} in {:.2} s, {} beeps",
        seed, record.outcome, record.nav_time, record.beep_count
    );
    Ok(())
}

fn sweep_cell_name(beta: f64, n: usize) -> String {
    format!("beta{beta}_n{n}")
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (env, mut train, seed) = CommonConfig {
        config: args.config.clone(),
        seed: args.seed,
        n_humans: None,
        beta: None,
        workers: args.workers,
    }
    .resolve()?;
    if let Some(episodes) = args.episodes {
        train.rl_episodes = episodes;
    }
    fs::create_dir_all(&args.out)?;
    let cells_dir = args.out.join("cells");
    fs::create_dir_all(&cells_dir)?;

    let mut inputs = Vec::new();
    let mut cell_index = 0u64;
    for &beta in &args.betas {
        for &n in &args.n_humans {
            let name = sweep_cell_name(beta, n);
            let ckpt_path = cells_dir.join(format!("{name}.json"));
            if !ckpt_path.exists() && !args.evaluate_only {
                let cell_seed = crowdnav::seed::stream_seed(seed, "sweep-cell", cell_index);
                let setup = TrainSetup {
                    env: EnvConfig {
                        beta,
                        n,
                        seed: cell_seed,
                        ..env.clone()
                    },
                    train: train.clone(),
                    mode: args.mode,
                    seed: cell_seed,
                };
                setup.validate()?;
                eprintln!("training sweep cell {name} (seed {cell_seed})");
                let mut trainer = Trainer::new(setup)?;
                trainer.bootstrap()?;
                let mut lines = Vec::new();
                trainer.run_episodes(train.rl_episodes, args.workers, &mut |r| {
                    lines.push(serde_json::to_string(r).expect("log record serializes"));
                })?;
                fs::write(
                    cells_dir.join(format!("{name}.log.jsonl")),
                    lines.join("\n") + "\n",
                )?;
                trainer.checkpoint().save(&ckpt_path)?;
            }
            if ckpt_path.exists() {
                let (net, mode, _) = Checkpoint::load(&ckpt_path)?.into_net()?;
                inputs.push(SweepInput { beta, n, mode, net });
            }
            cell_index += 1;
        }
    }

    let rows: Vec<MetricRow> = beta_sweep(
        &inputs,
        &args.betas,
        &args.n_humans,
        &env,
        args.n_cases,
        args.base_seed,
        train.gamma,
        args.workers,
    )?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &rows)?;
    fs::write(args.out.join("sweep.csv"), &csv)?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("sweep".into(), "sweep.csv".into());
    artifacts.insert("cells".into(), "cells".into());
    write_manifest(
        &args.out,
        &RunManifest {
            version: 1,
            command: "sweep".into(),
            created_unix: now_unix(),
            seed,
            mode: Some(args.mode.to_string()),
            action_space: Some(action_set(args.mode).len()),
            workers: args.workers,
            env,
            train,
            extra: serde_json::json!({
                "betas": args.betas,
                "n_humans": args.n_humans,
                "n_cases": args.n_cases,
                "base_seed": args.base_seed,
            }),
            artifacts,
        },
    )?;
    print!("{}", format_metrics_table(&rows));
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let file = fs::File::open(&args.trace)
        .with_context(|| format!("cannot open trace {}", args.trace.display()))?;
    let trajectory = trace::read_jsonl(std::io::BufReader::new(file))?;
    let Some(first) = trajectory.first() else {
        bail!("trace {} holds no records", args.trace.display());
    };
    // Records hold post-step poses; recover the start from the first one.
    let dt = first.t;
    let robot_start = first.robot_position - first.robot_velocity * dt;
    let svg = render_trajectory_svg(
        &RenderInput {
            trajectory: &trajectory,
            robot_start,
            robot_goal: first.robot_goal,
        },
        &RenderStyle::default(),
    );
    fs::write(&args.out, svg)?;
    Ok(())
}
