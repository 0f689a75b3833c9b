//! Episode rollouts shared by training, imitation, and evaluation.

use super::replay::Transition;
use super::{epsilon_greedy, lookahead_policy, RlError, ValueEstimate};
use crate::env::{Action, CrowdSim, EnvConfig, JointState, Terminal};
use crate::orca::{self, Disc};
use crate::trace::{PedSample, TraceRecord, Trajectory};
use crate::vec2::Vec2;
use rand_chacha::ChaCha8Rng;

/// What the robot does for one step: a velocity plus the beep flag, with the
/// discrete action attached when one produced the command.
#[derive(Debug, Clone, Copy)]
pub struct RobotCommand {
    pub velocity: Vec2,
    pub beep: bool,
    pub action: Option<Action>,
}

/// A robot controller. Implementations are read-only so rollouts can run on
/// parallel workers against one shared policy.
pub trait RobotPolicy: Sync {
    fn command(&self, state: &JointState, cfg: &EnvConfig) -> Result<RobotCommand, RlError>;
}

/// Drives the robot with the same reciprocal collision avoidance the crowd
/// uses; the demonstration teacher. Never beeps.
#[derive(Debug, Clone, Copy)]
pub struct OrcaTeacher {
    pub tie_break_rotation: f64,
}

impl RobotPolicy for OrcaTeacher {
    fn command(&self, state: &JointState, cfg: &EnvConfig) -> Result<RobotCommand, RlError> {
        let robot = &state.robot;
        let to_goal = robot.goal - robot.position;
        let dist = to_goal.norm();
        let pref = if dist < robot.radius {
            Vec2::default()
        } else {
            to_goal.normalized_or(Vec2::default()) * robot.pref_speed.min(dist / cfg.dt)
        };
        let self_disc = Disc {
            position: robot.position,
            velocity: robot.velocity,
            radius: robot.radius,
            pref_velocity: pref,
            max_speed: robot.pref_speed,
        };
        let neighbors: Vec<Disc> = state
            .pedestrians
            .iter()
            .map(|p| Disc {
                position: p.position,
                velocity: p.velocity,
                radius: p.radius,
                pref_velocity: Vec2::default(),
                max_speed: cfg.ped_max_speed,
            })
            .collect();
        let lines =
            orca::compute_orca_lines(&self_disc, &neighbors, orca::DEFAULT_TIME_HORIZON, cfg.dt);
        let velocity = orca::solve_velocity(
            &lines,
            pref.rotated(self.tie_break_rotation),
            self_disc.max_speed,
        );
        Ok(RobotCommand {
            velocity,
            beep: false,
            action: None,
        })
    }
}

/// One-step-lookahead greedy policy over a discrete action set.
pub struct GreedyValuePolicy<'a, V: ValueEstimate> {
    pub value: &'a V,
    pub actions: Vec<Action>,
    pub gamma: f64,
}

impl<V: ValueEstimate + Sync> RobotPolicy for GreedyValuePolicy<'_, V> {
    fn command(&self, state: &JointState, cfg: &EnvConfig) -> Result<RobotCommand, RlError> {
        let action = lookahead_policy(self.value, state, &self.actions, cfg, self.gamma)?;
        Ok(RobotCommand {
            velocity: action.velocity(cfg.v_pref),
            beep: action.beep(),
            action: Some(action),
        })
    }
}

/// Completed episode driven by a [`RobotPolicy`].
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub outcome: Terminal,
    pub steps: u32,
    /// Simulation time at termination, in seconds.
    pub nav_time: f64,
    pub beep_count: u32,
    /// Discounted return of the start state under the label convention.
    pub discounted_return: f64,
    /// Visited states `s_0 ..= s_T` (one more than `steps`).
    pub states: Vec<JointState>,
    /// Reward received on each step.
    pub rewards: Vec<f64>,
    /// Per-step trace; empty unless recording was requested.
    pub trajectory: Trajectory,
}

/// Monte-Carlo state labels: rewards are discounted by the age of the
/// resulting state, and the terminal state is labeled with the reward that
/// produced it.
pub fn discounted_labels(rewards: &[f64], step_discount: f64) -> Vec<f64> {
    let mut labels = vec![0.0; rewards.len() + 1];
    labels[rewards.len()] = rewards.last().copied().unwrap_or(0.0);
    let mut running = 0.0;
    for (k, r) in rewards.iter().enumerate().rev() {
        running = step_discount * (r + running);
        labels[k] = running;
    }
    labels
}

fn trace_record(sim: &CrowdSim, beep: bool, reward: f64, reward_env: f64, reward_social: f64) -> TraceRecord {
    TraceRecord {
        episode: sim.episode_seed(),
        t: sim.time(),
        robot_position: sim.robot().position,
        robot_velocity: sim.robot().velocity,
        robot_goal: sim.robot().goal,
        beep,
        pedestrians: sim
            .pedestrians()
            .iter()
            .map(|p| PedSample {
                id: p.id,
                position: p.position,
                velocity: p.velocity,
            })
            .collect(),
        reward,
        reward_env,
        reward_social,
        terminal: sim.terminal(),
    }
}

/// Runs one episode to termination under `policy`.
pub fn rollout_with_policy(
    sim: &mut CrowdSim,
    policy: &dyn RobotPolicy,
    step_discount: f64,
    record_trace: bool,
) -> Result<EpisodeRecord, RlError> {
    let mut states = vec![sim.observe()];
    let mut rewards = Vec::new();
    let mut trajectory = Vec::new();
    let mut beep_count = 0;
    loop {
        let cmd = policy.command(states.last().unwrap(), sim.config())?;
        let out = sim.step_with_velocity(cmd.velocity, cmd.beep)?;
        if cmd.beep {
            beep_count += 1;
        }
        rewards.push(out.reward);
        if record_trace {
            trajectory.push(trace_record(
                sim,
                cmd.beep,
                out.reward,
                out.reward_env,
                out.reward_social,
            ));
        }
        states.push(out.next_state);
        if out.terminal.is_over() {
            let labels = discounted_labels(&rewards, step_discount);
            return Ok(EpisodeRecord {
                seed: sim.episode_seed(),
                outcome: out.terminal,
                steps: rewards.len() as u32,
                nav_time: sim.time(),
                beep_count,
                discounted_return: labels[0],
                states,
                rewards,
                trajectory,
            });
        }
    }
}

/// Training rollout: epsilon-greedy lookahead, transitions collected for the
/// replay buffer. The lookahead is only evaluated on exploitation steps.
pub struct TrainingRollout {
    pub outcome: Terminal,
    pub steps: u32,
    pub beep_count: u32,
    pub discounted_return: f64,
    pub transitions: Vec<Transition>,
}

pub fn rollout_training_episode<V: ValueEstimate>(
    sim: &mut CrowdSim,
    value: &V,
    actions: &[Action],
    gamma: f64,
    epsilon: f64,
    explore_rng: &mut ChaCha8Rng,
    step_discount: f64,
) -> Result<TrainingRollout, RlError> {
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    let mut beep_count = 0;
    let mut state = sim.observe();
    loop {
        let cfg = sim.config().clone();
        let action = epsilon_greedy(
            || lookahead_policy(value, &state, actions, &cfg, gamma),
            actions,
            epsilon,
            explore_rng,
        )?;
        if action.beep() {
            beep_count += 1;
        }
        let out = sim.step(action)?;
        rewards.push(out.reward);
        transitions.push(Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            terminal: out.terminal.is_over(),
        });
        state = out.next_state;
        if out.terminal.is_over() {
            return Ok(TrainingRollout {
                outcome: out.terminal,
                steps: rewards.len() as u32,
                beep_count,
                discounted_return: discounted_labels(&rewards, step_discount)[0],
                transitions,
            });
        }
    }
}
