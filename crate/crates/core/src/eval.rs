//! Seeded evaluation harness and reporting: metric tables over fixed seed
//! ranges, the beta/crowd-size sweep, and trajectory plots.

use crate::env::{CrowdSim, EnvConfig, PolicyMode, Terminal};
use crate::rl::{
    rollout_with_policy, step_discount, GreedyValuePolicy, RlError, RobotPolicy,
};
use crate::trace::TraceRecord;
use crate::valuenet::ValueNet;
use crate::vec2::Vec2;
use serde::Serialize;
use std::fmt::Write as _;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("no checkpoint for sweep cell beta={beta}, n={n}")]
    MissingCheckpoint { beta: f64, n: usize },
}

/// Episode outcome; the partition success/collision/timeout is exhaustive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl From<Terminal> for Outcome {
    fn from(t: Terminal) -> Self {
        match t {
            Terminal::Goal => Outcome::Success,
            Terminal::Collision => Outcome::Collision,
            Terminal::Timeout | Terminal::None => Outcome::Timeout,
        }
    }
}

/// One evaluated episode.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub outcome: Outcome,
    /// Simulation time at termination, in seconds.
    pub nav_time: f64,
    pub beep_count: u32,
    pub steps: u32,
    #[serde(skip)]
    pub robot_start: Vec2,
    #[serde(skip)]
    pub robot_goal: Vec2,
    #[serde(skip)]
    pub trajectory: Vec<TraceRecord>,
}

/// One row of the metric table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub n: usize,
    pub beta: f64,
    pub success: f64,
    pub collision: f64,
    pub timeout: f64,
    /// Mean navigation time over successful episodes; absent without any.
    pub time: Option<f64>,
    /// Mean per-episode fraction of steps spent beeping.
    pub beep_freq: f64,
}

/// Runs `n_cases` greedy episodes on seeds `base_seed..base_seed+n_cases`.
/// Identical inputs give identical tables; aggregation folds in seed order
/// regardless of the worker count.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    policy: &dyn RobotPolicy,
    cfg: &EnvConfig,
    n_cases: u64,
    base_seed: u64,
    gamma: f64,
    workers: usize,
    record_traces: bool,
    method: &str,
) -> Result<(MetricRow, Vec<EpisodeResult>), EvalError> {
    assert!(n_cases >= 1, "evaluation needs at least one case");
    let discount = step_discount(gamma, cfg.dt, cfg.v_pref);

    let run_one = |seed: u64| -> Result<EpisodeResult, RlError> {
        let mut sim = CrowdSim::new(cfg.clone(), seed)?;
        let robot_start = sim.robot().position;
        let robot_goal = sim.robot().goal;
        let record = rollout_with_policy(&mut sim, policy, discount, record_traces)?;
        Ok(EpisodeResult {
            seed,
            outcome: record.outcome.into(),
            nav_time: record.nav_time,
            beep_count: record.beep_count,
            steps: record.steps,
            robot_start,
            robot_goal,
            trajectory: record.trajectory,
        })
    };

    let workers = workers.max(1);
    let mut episodes: Vec<EpisodeResult> = Vec::with_capacity(n_cases as usize);
    let mut next = base_seed;
    let end = base_seed + n_cases;
    while next < end {
        let group: Vec<u64> = (next..end.min(next + workers as u64)).collect();
        if group.len() == 1 {
            episodes.push(run_one(group[0])?);
        } else {
            let results: Vec<Result<EpisodeResult, RlError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|&seed| scope.spawn(move || run_one(seed)))
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            for r in results {
                episodes.push(r?);
            }
        }
        next += group.len() as u64;
    }

    Ok((summarize(&episodes, method, cfg.n, cfg.beta), episodes))
}

/// Folds episode results into a metric row (deterministic, order as given).
pub fn summarize(episodes: &[EpisodeResult], method: &str, n: usize, beta: f64) -> MetricRow {
    let total = episodes.len() as f64;
    let count = |o: Outcome| episodes.iter().filter(|e| e.outcome == o).count() as f64;
    let successes: Vec<&EpisodeResult> = episodes
        .iter()
        .filter(|e| e.outcome == Outcome::Success)
        .collect();
    let time = if successes.is_empty() {
        None
    } else {
        Some(successes.iter().map(|e| e.nav_time).sum::<f64>() / successes.len() as f64)
    };
    let beep_freq = episodes
        .iter()
        .map(|e| f64::from(e.beep_count) / f64::from(e.steps.max(1)))
        .sum::<f64>()
        / total.max(1.0);
    MetricRow {
        method: method.to_string(),
        n,
        beta,
        success: count(Outcome::Success) / total,
        collision: count(Outcome::Collision) / total,
        timeout: count(Outcome::Timeout) / total,
        time,
        beep_freq,
    }
}

/// Trained artifact for one sweep cell.
pub struct SweepInput {
    pub beta: f64,
    pub n: usize,
    pub mode: PolicyMode,
    pub net: ValueNet,
}

/// Evaluates one trained checkpoint per (beta, crowd size) cell and reports
/// beep frequency and success rate for each. Missing cells are an error.
#[allow(clippy::too_many_arguments)]
pub fn beta_sweep(
    inputs: &[SweepInput],
    betas: &[f64],
    ns: &[usize],
    base_cfg: &EnvConfig,
    n_cases: u64,
    base_seed: u64,
    gamma: f64,
    workers: usize,
) -> Result<Vec<MetricRow>, EvalError> {
    let mut rows = Vec::with_capacity(betas.len() * ns.len());
    for &beta in betas {
        for &n in ns {
            let input = inputs
                .iter()
                .find(|i| (i.beta - beta).abs() < 1e-12 && i.n == n)
                .ok_or(EvalError::MissingCheckpoint { beta, n })?;
            let cfg = EnvConfig {
                n,
                beta,
                ..base_cfg.clone()
            };
            let policy = GreedyValuePolicy {
                value: &input.net,
                actions: crate::env::action_set(input.mode),
                gamma,
            };
            let (row, _) = evaluate(
                &policy,
                &cfg,
                n_cases,
                base_seed,
                gamma,
                workers,
                false,
                &input.mode.to_string(),
            )?;
            rows.push(row);
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// CSV emission with the fixed header
/// `method,N,beta,success,collision,timeout,time,beep_freq`.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricRow]) -> io::Result<()> {
    writeln!(out, "method,N,beta,success,collision,timeout,time,beep_freq")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.n,
            r.beta,
            r.success,
            r.collision,
            r.timeout,
            fmt_opt(r.time),
            r.beep_freq
        )?;
    }
    Ok(())
}

/// Human-readable aligned table.
pub fn format_metrics_table(rows: &[MetricRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>3} {:>5} {:>8} {:>10} {:>8} {:>7} {:>10}",
        "method", "N", "beta", "success", "collision", "timeout", "time", "beep_freq"
    );
    for r in rows {
        let time = r.time.map_or("-".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(
            s,
            "{:<8} {:>3} {:>5.2} {:>8.3} {:>10.3} {:>8.3} {:>7} {:>10.4}",
            r.method, r.n, r.beta, r.success, r.collision, r.timeout, time, r.beep_freq
        );
    }
    s
}

/// Plot styling; defaults draw a 640px square.
#[derive(Debug, Clone)]
pub struct RenderStyle {
    pub size_px: f64,
    pub margin_m: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            size_px: 640.0,
            margin_m: 1.0,
        }
    }
}

/// Inputs for one trajectory plot. Start and goal are carried separately so
/// an empty trajectory still renders its markers.
pub struct RenderInput<'a> {
    pub trajectory: &'a [TraceRecord],
    pub robot_start: Vec2,
    pub robot_goal: Vec2,
}

impl<'a> From<&'a EpisodeResult> for RenderInput<'a> {
    fn from(e: &'a EpisodeResult) -> Self {
        RenderInput {
            trajectory: &e.trajectory,
            robot_start: e.robot_start,
            robot_goal: e.robot_goal,
        }
    }
}

/// Renders an episode as a standalone SVG document: gray pedestrian traces,
/// the robot trace in orange, enlarged orange circles at beep positions, and
/// start/goal markers. Output bytes are a pure function of the input.
pub fn render_trajectory_svg(input: &RenderInput, style: &RenderStyle) -> String {
    let mut min = input.robot_start;
    let mut max = input.robot_start;
    let mut grow = |p: Vec2| {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    };
    grow(input.robot_goal);
    for rec in input.trajectory {
        grow(rec.robot_position);
        for p in &rec.pedestrians {
            grow(p.position);
        }
    }
    min.x -= style.margin_m;
    min.y -= style.margin_m;
    max.x += style.margin_m;
    max.y += style.margin_m;
    let span = (max.x - min.x).max(max.y - min.y).max(1e-9);
    let scale = style.size_px / span;
    // World y points up, SVG y points down.
    let sx = |x: f64| (x - min.x) * scale;
    let sy = |y: f64| (max.y - y) * scale;
    let pt = |p: Vec2| format!("{:.3},{:.3}", sx(p.x), sy(p.y));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0:.0}" height="{0:.0}" viewBox="0 0 {0:.0} {0:.0}">"#,
        style.size_px
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    // Pedestrian traces.
    let mut ped_ids: Vec<usize> = input
        .trajectory
        .iter()
        .flat_map(|r| r.pedestrians.iter().map(|p| p.id))
        .collect();
    ped_ids.sort_unstable();
    ped_ids.dedup();
    for id in ped_ids {
        let mut points = String::new();
        for rec in input.trajectory {
            if let Some(p) = rec.pedestrians.iter().find(|p| p.id == id) {
                if !points.is_empty() {
                    points.push(' ');
                }
                points.push_str(&pt(p.position));
            }
        }
        let _ = writeln!(
            svg,
            r##"<polyline points="{points}" fill="none" stroke="#9b9b9b" stroke-width="1.5"/>"##
        );
        for rec in input.trajectory {
            if let Some(p) = rec.pedestrians.iter().find(|p| p.id == id) {
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{:.3}" cy="{:.3}" r="2.0" fill="#9b9b9b"/>"##,
                    sx(p.position.x),
                    sy(p.position.y)
                );
            }
        }
    }

    // Robot trace.
    let mut robot_points = pt(input.robot_start);
    for rec in input.trajectory {
        robot_points.push(' ');
        robot_points.push_str(&pt(rec.robot_position));
    }
    let _ = writeln!(
        svg,
        r##"<polyline points="{robot_points}" fill="none" stroke="#e8820c" stroke-width="2.0"/>"##
    );
    for rec in input.trajectory {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.3}" cy="{:.3}" r="3.0" fill="#e8820c"/>"##,
            sx(rec.robot_position.x),
            sy(rec.robot_position.y)
        );
    }

    // Beep events as enlarged circles at the position they were emitted.
    for rec in input.trajectory.iter().filter(|r| r.beep) {
        let _ = writeln!(
            svg,
            r##"<circle class="beep" cx="{:.3}" cy="{:.3}" r="9.0" fill="none" stroke="#e8820c" stroke-width="2.0"/>"##,
            sx(rec.robot_position.x),
            sy(rec.robot_position.y)
        );
    }

    // Start and goal markers.
    let _ = writeln!(
        svg,
        r##"<circle class="start" cx="{:.3}" cy="{:.3}" r="5.0" fill="none" stroke="#2060c0" stroke-width="2.0"/>"##,
        sx(input.robot_start.x),
        sy(input.robot_start.y)
    );
    let g = input.robot_goal;
    let _ = writeln!(
        svg,
        r##"<path class="goal" d="M {:.3} {:.3} l 6 12 l -12 0 z" fill="#20a040"/>"##,
        sx(g.x),
        sy(g.y) - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{action_set, EnvConfig, JointState};
    use crate::rl::{RobotCommand, ValueFn};
    use crate::trace::PedSample;
    use crate::valuenet::{NetShape, FEATURE_DIM};

    struct GoalSeek;

    impl RobotPolicy for GoalSeek {
        fn command(&self, state: &JointState, _cfg: &EnvConfig) -> Result<RobotCommand, RlError> {
            let robot = &state.robot;
            let v = (robot.goal - robot.position).normalized_or(Vec2::default())
                * robot.pref_speed;
            Ok(RobotCommand {
                velocity: v,
                beep: false,
                action: None,
            })
        }
    }

    #[test]
    fn goal_seeker_succeeds_in_empty_scenes() {
        let cfg = EnvConfig {
            n: 0,
            ..EnvConfig::default()
        };
        let (row, episodes) = evaluate(&GoalSeek, &cfg, 10, 500, 0.9, 1, false, "seek").unwrap();
        assert_eq!(row.success, 1.0);
        assert_eq!(row.collision, 0.0);
        assert_eq!(row.timeout, 0.0);
        assert_eq!(row.beep_freq, 0.0);
        assert!(row.time.unwrap() > 0.0);
        assert_eq!(episodes.len(), 10);
    }

    #[test]
    fn rates_partition_to_one() {
        let cfg = EnvConfig {
            n: 6,
            ..EnvConfig::default()
        };
        let (row, _) = evaluate(&GoalSeek, &cfg, 16, 0, 0.9, 1, false, "seek").unwrap();
        assert!((row.success + row.collision + row.timeout - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_deterministic_and_worker_independent() {
        let cfg = EnvConfig {
            n: 4,
            ..EnvConfig::default()
        };
        let run = |workers: usize| {
            let (row, eps) =
                evaluate(&GoalSeek, &cfg, 8, 100, 0.9, workers, false, "seek").unwrap();
            (
                serde_json::to_string(&row).unwrap(),
                serde_json::to_string(&eps).unwrap(),
            )
        };
        assert_eq!(run(1), run(1));
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn changing_one_seed_changes_at_most_that_episode() {
        let cfg = EnvConfig {
            n: 3,
            ..EnvConfig::default()
        };
        let (_, a) = evaluate(&GoalSeek, &cfg, 5, 100, 0.9, 1, false, "seek").unwrap();
        let (_, b) = evaluate(&GoalSeek, &cfg, 5, 101, 0.9, 1, false, "seek").unwrap();
        // Seeds 101..=104 overlap; their per-episode results must agree.
        for (x, y) in a[1..].iter().zip(&b[..4]) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.outcome, y.outcome);
            assert_eq!(x.nav_time, y.nav_time);
        }
    }

    #[test]
    fn sarl_mode_records_zero_beep_frequency() {
        let shape = NetShape {
            embed: vec![FEATURE_DIM, 8, 6],
            pairwise: vec![6, 4],
            attention: vec![12, 6, 1],
            value: vec![10, 6, 1],
        };
        let net = ValueNet::init(shape, 5).unwrap();
        let policy = GreedyValuePolicy {
            value: &net,
            actions: action_set(PolicyMode::Sarl),
            gamma: 0.9,
        };
        let cfg = EnvConfig {
            n: 3,
            ..EnvConfig::default()
        };
        let (row, _) = evaluate(&policy, &cfg, 5, 40, 0.9, 1, false, "sarl").unwrap();
        assert_eq!(row.beep_freq, 0.0);
    }

    #[test]
    fn sweep_single_cell_and_missing_cell() {
        let shape = NetShape {
            embed: vec![FEATURE_DIM, 8, 6],
            pairwise: vec![6, 4],
            attention: vec![12, 6, 1],
            value: vec![10, 6, 1],
        };
        let cfg = EnvConfig {
            n: 2,
            ..EnvConfig::default()
        };
        let inputs = vec![SweepInput {
            beta: 0.1,
            n: 2,
            mode: PolicyMode::L2b,
            net: ValueNet::init(shape, 5).unwrap(),
        }];
        let rows = beta_sweep(&inputs, &[0.1], &[2], &cfg, 3, 0, 0.9, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].beta, 0.1);

        let err = beta_sweep(&inputs, &[0.2], &[2], &cfg, 3, 0, 0.9, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("beta=0.2") && msg.contains("n=2"), "{msg}");
    }

    #[test]
    fn csv_has_fixed_header_and_one_row_per_entry() {
        let rows = vec![MetricRow {
            method: "l2b".into(),
            n: 5,
            beta: 0.2,
            success: 0.9,
            collision: 0.1,
            timeout: 0.0,
            time: Some(10.25),
            beep_freq: 0.05,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,N,beta,success,collision,timeout,time,beep_freq"
        );
        assert_eq!(lines.next().unwrap(), "l2b,5,0.2,0.9,0.1,0,10.25,0.05");
        assert!(lines.next().is_none());
        assert!(!format_metrics_table(&rows).is_empty());
    }

    fn sample_record(t: f64, beep: bool, pos: Vec2) -> TraceRecord {
        TraceRecord {
            episode: 1,
            t,
            robot_position: pos,
            robot_velocity: Vec2::new(1.0, 0.0),
            robot_goal: Vec2::new(4.0, 0.0),
            beep,
            pedestrians: vec![PedSample {
                id: 0,
                position: Vec2::new(1.0, 1.0),
                velocity: Vec2::default(),
            }],
            reward: 0.0,
            reward_env: 0.0,
            reward_social: 0.0,
            terminal: Terminal::None,
        }
    }

    #[test]
    fn render_counts_beep_glyphs_and_is_byte_deterministic() {
        let trajectory: Vec<TraceRecord> = (0..6)
            .map(|k| {
                sample_record(
                    0.25 * (k + 1) as f64,
                    k % 2 == 0,
                    Vec2::new(0.25 * k as f64, 0.0),
                )
            })
            .collect();
        let input = RenderInput {
            trajectory: &trajectory,
            robot_start: Vec2::new(-0.25, 0.0),
            robot_goal: Vec2::new(4.0, 0.0),
        };
        let a = render_trajectory_svg(&input, &RenderStyle::default());
        let b = render_trajectory_svg(&input, &RenderStyle::default());
        assert_eq!(a, b);
        assert_eq!(a.matches(r#"class="beep""#).count(), 3);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_trajectory_renders_markers_only() {
        let input = RenderInput {
            trajectory: &[],
            robot_start: Vec2::new(-4.0, 0.0),
            robot_goal: Vec2::new(4.0, 0.0),
        };
        let svg = render_trajectory_svg(&input, &RenderStyle::default());
        assert!(svg.contains(r#"class="start""#));
        assert!(svg.contains(r#"class="goal""#));
        assert_eq!(svg.matches(r#"class="beep""#).count(), 0);
    }

    #[test]
    fn greedy_policy_with_oracle_runs_via_evaluate() {
        // Exercises the GreedyValuePolicy path end to end with a cheap oracle.
        let cfg = EnvConfig {
            n: 2,
            ..EnvConfig::default()
        };
        let oracle = ValueFn(|s: &JointState| -s.robot.goal_distance());
        let policy = GreedyValuePolicy {
            value: &oracle,
            actions: action_set(PolicyMode::L2b),
            gamma: 0.9,
        };
        let (row, _) = evaluate(&policy, &cfg, 5, 7, 0.9, 2, true, "oracle").unwrap();
        assert!((row.success + row.collision + row.timeout - 1.0).abs() < 1e-12);
    }
}
