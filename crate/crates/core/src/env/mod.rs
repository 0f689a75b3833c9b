//! The crowd-navigation environment.
//!
//! Circle-crossing scenarios: the robot and `n` pedestrians start on a circle
//! and walk to (noisy) antipodal goals, so every path crosses the center.
//! Pedestrians follow collision avoidance toward their goals, overridden by
//! the beep reaction when the robot clears its path. The robot observes the
//! joint state (its own full state plus the observable projection of every
//! pedestrian), acts on a discrete action set, and collects the sum of an
//! environment reward (goal / collision) and a social reward (beep cost /
//! discomfort cost).

mod action;
mod config;

pub use action::{action_set, Action, PolicyMode, NUM_HEADINGS, STILL_INDEX};
pub use config::{ConfigError, EnvConfig};

use crate::ervo::{self, BeepEvent};
use crate::orca::{self, Disc};
use crate::seed;
use crate::vec2::Vec2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("scenario placement failed after {attempts} attempts (agent {agent})")]
    ScenarioPlacement { agent: usize, attempts: usize },
    #[error("cannot step a terminated episode (terminal: {0:?})")]
    EpisodeOver(Terminal),
}

/// Full robot state. All of it is observable to the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    pub pref_speed: f64,
    pub radius: f64,
    pub beep_range: f64,
    /// Last nonzero commanded direction; initially the direction to the goal.
    pub heading: Vec2,
}

impl RobotState {
    pub fn goal_distance(&self) -> f64 {
        (self.position - self.goal).norm()
    }
}

/// Full pedestrian state as the environment tracks it. The goal is hidden
/// from the robot and never enters a `JointState`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianState {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub goal: Vec2,
}

/// Observable projection of one pedestrian: position, velocity, distance to
/// the robot, and radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedPedestrian {
    pub position: Vec2,
    pub velocity: Vec2,
    pub distance: f64,
    pub radius: f64,
}

/// What the robot sees: its own state plus observable pedestrian rows,
/// sorted by distance (ties by insertion order) for a stable layout.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub robot: RobotState,
    pub pedestrians: Vec<ObservedPedestrian>,
    pub time: f64,
}

impl JointState {
    /// Smallest surface clearance to any pedestrian (center distance minus
    /// both radii); infinite when the scene is empty.
    pub fn min_clearance(&self) -> f64 {
        self.pedestrians
            .iter()
            .map(|p| p.distance - (self.robot.radius + p.radius))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    None,
    Goal,
    Collision,
    Timeout,
}

impl Terminal {
    pub fn is_over(&self) -> bool {
        *self != Terminal::None
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: JointState,
    pub reward: f64,
    pub reward_env: f64,
    pub reward_social: f64,
    pub terminal: Terminal,
}

/// Event flags the environment reward conditions on.
#[derive(Debug, Clone, Copy, Default)]
pub struct OutcomeFlags {
    pub goal_reached: bool,
    pub collided: bool,
}

/// Places the robot and `cfg.n` pedestrians on the circle with antipodal
/// goals and per-coordinate uniform noise. Starts are resampled until no two
/// agents overlap; identical seeds give identical layouts.
pub fn generate_scenario(
    cfg: &EnvConfig,
    episode_seed: u64,
) -> Result<(RobotState, Vec<PedestrianState>), EnvError> {
    const MAX_ATTEMPTS: usize = 1000;
    let mut rng = seed::stream_rng(episode_seed, "scenario", 0);
    let place = |rng: &mut rand_chacha::ChaCha8Rng| {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let on_circle = Vec2::new(
            cfg.circle_radius * angle.cos(),
            cfg.circle_radius * angle.sin(),
        );
        let w = cfg.noise_half_width;
        let noise = |rng: &mut rand_chacha::ChaCha8Rng| {
            if w > 0.0 {
                Vec2::new(rng.gen_range(-w..=w), rng.gen_range(-w..=w))
            } else {
                Vec2::default()
            }
        };
        let start = on_circle + noise(rng);
        let goal = -on_circle + noise(rng);
        (start, goal)
    };

    let mut taken: Vec<(Vec2, f64)> = Vec::with_capacity(cfg.n + 1);
    let place_clear = |rng: &mut rand_chacha::ChaCha8Rng,
                           radius: f64,
                           taken: &mut Vec<(Vec2, f64)>,
                           agent: usize| {
        for _ in 0..MAX_ATTEMPTS {
            let (start, goal) = place(rng);
            let clear = taken
                .iter()
                .all(|&(p, r)| (p - start).norm() > r + radius);
            if clear {
                taken.push((start, radius));
                return Ok((start, goal));
            }
        }
        Err(EnvError::ScenarioPlacement {
            agent,
            attempts: MAX_ATTEMPTS,
        })
    };

    let (robot_start, robot_goal) = place_clear(&mut rng, cfg.robot_radius, &mut taken, 0)?;
    let robot = RobotState {
        position: robot_start,
        velocity: Vec2::default(),
        goal: robot_goal,
        pref_speed: cfg.v_pref,
        radius: cfg.robot_radius,
        beep_range: cfg.beep_range,
        heading: (robot_goal - robot_start).normalized_or(Vec2::new(1.0, 0.0)),
    };

    let mut peds = Vec::with_capacity(cfg.n);
    for id in 0..cfg.n {
        let (start, goal) = place_clear(&mut rng, cfg.ped_radius, &mut taken, id + 1)?;
        peds.push(PedestrianState {
            id,
            position: start,
            velocity: Vec2::default(),
            radius: cfg.ped_radius,
            goal,
        });
    }
    Ok((robot, peds))
}

/// Collision predicate: some pedestrian center is within the sum of radii.
pub fn collision_check(robot: &RobotState, peds: &[PedestrianState]) -> bool {
    peds.iter()
        .any(|p| (p.position - robot.position).norm() <= robot.radius + p.radius)
}

/// Goal / collision / time reward.
pub fn reward_env(state: &JointState, flags: OutcomeFlags, cfg: &EnvConfig) -> f64 {
    if flags.goal_reached {
        1.0 - cfg.alpha * state.time / cfg.t_lim
    } else if flags.collided {
        -0.25
    } else {
        0.0
    }
}

/// Crowd-interaction reward: beep cost inside the beep range, otherwise
/// discomfort cost inside the discomfort clearance.
pub fn reward_social(state: &JointState, action: Action, cfg: &EnvConfig) -> f64 {
    social_reward_term(state.min_clearance(), action.beep(), cfg)
}

fn social_reward_term(clearance: f64, beep: bool, cfg: &EnvConfig) -> f64 {
    // Once bodies touch the interaction distance is zero, not negative;
    // keeps the total step reward within [-0.45, 1.0] on collision steps
    // (the collision penalty itself is the environment term's job).
    let clearance = clearance.max(0.0);
    if beep && clearance < cfg.beep_range {
        cfg.beta * (clearance - cfg.beep_range)
    } else if clearance < cfg.d_disc {
        cfg.eta * (clearance - cfg.d_disc)
    } else {
        0.0
    }
}

/// One episode of the simulated environment.
#[derive(Debug, Clone)]
pub struct CrowdSim {
    cfg: EnvConfig,
    robot: RobotState,
    peds: Vec<PedestrianState>,
    steps: u32,
    terminal: Terminal,
    episode_seed: u64,
    tie_break_rotation: f64,
    fallback_dir: Vec2,
}

impl CrowdSim {
    pub fn new(cfg: EnvConfig, episode_seed: u64) -> Result<Self, EnvError> {
        let (robot, peds) = generate_scenario(&cfg, episode_seed)?;
        Ok(Self::from_parts(cfg, robot, peds, episode_seed))
    }

    /// Builds an episode from explicit states; used for scripted scenarios.
    pub fn from_parts(
        cfg: EnvConfig,
        robot: RobotState,
        peds: Vec<PedestrianState>,
        episode_seed: u64,
    ) -> Self {
        let mut rng = seed::stream_rng(episode_seed, "episode-misc", 0);
        let fallback_angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let tie_break_rotation = if episode_seed & 1 == 0 {
            orca::TIE_BREAK_ROTATION
        } else {
            -orca::TIE_BREAK_ROTATION
        };
        CrowdSim {
            cfg,
            robot,
            peds,
            steps: 0,
            terminal: Terminal::None,
            episode_seed,
            tie_break_rotation,
            fallback_dir: Vec2::new(fallback_angle.cos(), fallback_angle.sin()),
        }
    }

    pub fn reset(&mut self, episode_seed: u64) -> Result<JointState, EnvError> {
        let (robot, peds) = generate_scenario(&self.cfg, episode_seed)?;
        *self = Self::from_parts(self.cfg.clone(), robot, peds, episode_seed);
        Ok(self.observe())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn pedestrians(&self) -> &[PedestrianState] {
        &self.peds
    }

    pub fn time(&self) -> f64 {
        f64::from(self.steps) * self.cfg.dt
    }

    pub fn terminal(&self) -> Terminal {
        self.terminal
    }

    pub fn episode_seed(&self) -> u64 {
        self.episode_seed
    }

    /// Signed preferred-velocity rotation used by the crowd this episode;
    /// the demonstration teacher applies the same one.
    pub fn tie_break_rotation(&self) -> f64 {
        self.tie_break_rotation
    }

    /// Observable joint state, pedestrians sorted by distance.
    pub fn observe(&self) -> JointState {
        let mut rows: Vec<ObservedPedestrian> = self
            .peds
            .iter()
            .map(|p| ObservedPedestrian {
                position: p.position,
                velocity: p.velocity,
                distance: (p.position - self.robot.position).norm(),
                radius: p.radius,
            })
            .collect();
        rows.sort_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap());
        JointState {
            robot: self.robot,
            pedestrians: rows,
            time: self.time(),
        }
    }

    /// Applies a discrete action.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        self.step_with_velocity(action.velocity(self.cfg.v_pref), action.beep())
    }

    /// Applies an arbitrary robot velocity; used by the demonstration teacher
    /// which drives the robot with continuous collision-avoidance output.
    pub fn step_with_velocity(
        &mut self,
        robot_velocity: Vec2,
        beep: bool,
    ) -> Result<StepOutcome, EnvError> {
        if self.terminal.is_over() {
            return Err(EnvError::EpisodeOver(self.terminal));
        }
        let cfg = &self.cfg;

        if robot_velocity.norm_sq() > 0.0 {
            self.robot.heading = robot_velocity.normalized_or(self.robot.heading);
        }
        let beep_event = BeepEvent {
            active: beep,
            robot_position: self.robot.position,
            robot_heading: self.robot.heading,
            range: cfg.beep_range,
            fallback_dir: self.fallback_dir,
        };

        // Pedestrian update from the pre-step snapshot: beeped pedestrians
        // flee, the rest head for their goals, and collision avoidance
        // resolves the final velocities simultaneously.
        let discs: Vec<Disc> = self
            .peds
            .iter()
            .map(|p| {
                let disc = Disc {
                    position: p.position,
                    velocity: p.velocity,
                    radius: p.radius,
                    pref_velocity: Vec2::default(),
                    max_speed: cfg.ped_max_speed,
                };
                let pref = ervo::escape_velocity(&disc, &beep_event)
                    .unwrap_or_else(|| goal_preference(p, cfg));
                Disc {
                    pref_velocity: pref,
                    ..disc
                }
            })
            .collect();
        let robot_disc = Disc {
            position: self.robot.position,
            velocity: self.robot.velocity,
            radius: self.robot.radius,
            pref_velocity: Vec2::default(),
            max_speed: cfg.v_pref,
        };

        let mut new_velocities = Vec::with_capacity(discs.len());
        let mut neighbors: Vec<Disc> = Vec::with_capacity(discs.len());
        for (i, disc) in discs.iter().enumerate() {
            neighbors.clear();
            neighbors.extend(discs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, d)| *d));
            if cfg.robot_visible {
                neighbors.push(robot_disc);
            }
            let lines = orca::compute_orca_lines(disc, &neighbors, orca::DEFAULT_TIME_HORIZON, cfg.dt);
            let pref = disc.pref_velocity.rotated(self.tie_break_rotation);
            new_velocities.push(orca::solve_velocity(&lines, pref, disc.max_speed));
        }

        for (p, v) in self.peds.iter_mut().zip(&new_velocities) {
            p.velocity = *v;
            p.position += *v * cfg.dt;
        }
        self.robot.velocity = robot_velocity;
        self.robot.position += robot_velocity * cfg.dt;
        self.steps += 1;

        let next_state = self.observe();
        let flags = OutcomeFlags {
            goal_reached: next_state.robot.goal_distance() < cfg.robot_radius,
            collided: next_state.min_clearance() <= 0.0,
        };
        let r_env = reward_env(&next_state, flags, cfg);
        let r_soc = social_reward_term(next_state.min_clearance(), beep, cfg);

        self.terminal = if flags.goal_reached {
            Terminal::Goal
        } else if flags.collided {
            Terminal::Collision
        } else if self.time() >= cfg.t_lim - 1e-9 {
            Terminal::Timeout
        } else {
            Terminal::None
        };

        Ok(StepOutcome {
            next_state,
            reward: r_env + r_soc,
            reward_env: r_env,
            reward_social: r_soc,
            terminal: self.terminal,
        })
    }
}

/// Goal-directed preferred velocity; pedestrians stop once their footprint
/// covers the goal and otherwise never overshoot it within one step.
fn goal_preference(ped: &PedestrianState, cfg: &EnvConfig) -> Vec2 {
    let to_goal = ped.goal - ped.position;
    let dist = to_goal.norm();
    if dist < ped.radius {
        return Vec2::default();
    }
    let speed = cfg.ped_max_speed.min(dist / cfg.dt);
    to_goal.normalized_or(Vec2::default()) * speed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robot_at(pos: Vec2, goal: Vec2, cfg: &EnvConfig) -> RobotState {
        RobotState {
            position: pos,
            velocity: Vec2::default(),
            goal,
            pref_speed: cfg.v_pref,
            radius: cfg.robot_radius,
            beep_range: cfg.beep_range,
            heading: (goal - pos).normalized_or(Vec2::new(1.0, 0.0)),
        }
    }

    fn ped_at(id: usize, pos: Vec2, goal: Vec2) -> PedestrianState {
        PedestrianState {
            id,
            position: pos,
            velocity: Vec2::default(),
            radius: 0.3,
            goal,
        }
    }

    fn observed(rows: Vec<(Vec2, f64)>, robot: RobotState, time: f64) -> JointState {
        let pedestrians = rows
            .into_iter()
            .map(|(p, r)| ObservedPedestrian {
                position: p,
                velocity: Vec2::default(),
                distance: (p - robot.position).norm(),
                radius: r,
            })
            .collect();
        JointState {
            robot,
            pedestrians,
            time,
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = EnvConfig::default();
        let (r1, p1) = generate_scenario(&cfg, 99).unwrap();
        let (r2, p2) = generate_scenario(&cfg, 99).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn empty_scenario_places_robot_near_antipode() {
        let cfg = EnvConfig {
            n: 0,
            ..EnvConfig::default()
        };
        for seed in 0..20 {
            let (robot, peds) = generate_scenario(&cfg, seed).unwrap();
            assert!(peds.is_empty());
            let sum = robot.position + robot.goal;
            // Start and goal noises each stay within the half-width per axis.
            assert!(sum.x.abs() <= 2.0 * cfg.noise_half_width + 1e-12);
            assert!(sum.y.abs() <= 2.0 * cfg.noise_half_width + 1e-12);
        }
    }

    #[test]
    fn dense_scenarios_have_no_initial_overlap() {
        let cfg = EnvConfig {
            n: 20,
            ..EnvConfig::default()
        };
        for seed in 0..25 {
            let (robot, peds) = generate_scenario(&cfg, seed).unwrap();
            for (i, a) in peds.iter().enumerate() {
                assert!((a.position - robot.position).norm() > 0.6);
                for b in peds.iter().skip(i + 1) {
                    assert!((a.position - b.position).norm() > 0.6);
                }
            }
        }
    }

    #[test]
    fn collision_predicate_thresholds() {
        let cfg = EnvConfig::default();
        let robot = robot_at(Vec2::default(), Vec2::new(4.0, 0.0), &cfg);
        let close = vec![ped_at(0, Vec2::new(0.59, 0.0), Vec2::default())];
        let apart = vec![ped_at(0, Vec2::new(0.61, 0.0), Vec2::default())];
        assert!(collision_check(&robot, &close));
        assert!(!collision_check(&robot, &apart));
        assert!(!collision_check(&robot, &[]));
    }

    #[test]
    fn env_reward_branches() {
        let cfg = EnvConfig::default();
        let robot = robot_at(Vec2::default(), Vec2::default(), &cfg);
        let at = |t: f64| observed(vec![], robot, t);
        let goal = OutcomeFlags {
            goal_reached: true,
            collided: false,
        };
        let collision = OutcomeFlags {
            goal_reached: false,
            collided: true,
        };
        assert_eq!(reward_env(&at(0.0), goal, &cfg), 1.0);
        assert_eq!(reward_env(&at(10.0), collision, &cfg), -0.25);
        assert!((reward_env(&at(25.0), goal, &cfg) - 0.9).abs() < 1e-12);
        assert_eq!(reward_env(&at(10.0), OutcomeFlags::default(), &cfg), 0.0);
    }

    #[test]
    fn social_reward_branches() {
        let cfg = EnvConfig::default();
        let robot = robot_at(Vec2::default(), Vec2::new(4.0, 0.0), &cfg);
        let with_clearance = |c: f64| observed(vec![(Vec2::new(c + 0.6, 0.0), 0.3)], robot, 0.0);
        let beep = Action::new(0, true).unwrap();
        let quiet = Action::new(0, false).unwrap();
        assert!((reward_social(&with_clearance(0.5), beep, &cfg) + 0.10).abs() < 1e-12);
        assert!((reward_social(&with_clearance(0.1), quiet, &cfg) + 0.05).abs() < 1e-12);
        assert_eq!(reward_social(&with_clearance(1.5), beep, &cfg), 0.0);
        // The beep branch shadows the discomfort branch.
        assert!((reward_social(&with_clearance(0.1), beep, &cfg) + 0.18).abs() < 1e-12);
        // Empty scene: beeping costs nothing.
        assert_eq!(
            reward_social(&observed(vec![], robot, 0.0), beep, &cfg),
            0.0
        );
    }

    #[test]
    fn straight_run_reaches_goal() {
        let cfg = EnvConfig {
            n: 0,
            ..EnvConfig::default()
        };
        let robot = robot_at(Vec2::default(), Vec2::new(1.0, 0.0), &cfg);
        let mut sim = CrowdSim::from_parts(cfg.clone(), robot, vec![], 7);
        let east = Action::new(0, false).unwrap();
        let mut last = None;
        for _ in 0..4 {
            let out = sim.step(east).unwrap();
            let done = out.terminal;
            last = Some(out);
            if done.is_over() {
                break;
            }
        }
        let out = last.unwrap();
        assert_eq!(out.terminal, Terminal::Goal);
        let expected = 1.0 - cfg.alpha * sim.time() / cfg.t_lim;
        assert!((out.reward_env - expected).abs() < 1e-12);
        assert!(sim.time() <= 1.0 + 1e-12);
    }

    #[test]
    fn beep_pushes_pedestrian_away() {
        let cfg = EnvConfig {
            n: 1,
            ..EnvConfig::default()
        };
        let robot = robot_at(Vec2::default(), Vec2::new(4.0, 0.0), &cfg);
        // Pedestrian half a meter ahead, walking toward the robot.
        let ped = ped_at(0, Vec2::new(0.5, 0.0), Vec2::new(-4.0, 0.0));
        let mut sim = CrowdSim::from_parts(cfg, robot, vec![ped], 7);
        let beep_east = Action::new(0, true).unwrap();
        sim.step(beep_east).unwrap();
        let ped_v = sim.pedestrians()[0].velocity;
        let radial = Vec2::new(0.5, 0.0).normalized_or(Vec2::default());
        assert!(
            ped_v.dot(radial) > 0.1,
            "pedestrian did not flee: {ped_v:?}"
        );
    }

    #[test]
    fn stepping_into_pedestrian_collides() {
        let cfg = EnvConfig {
            n: 1,
            ..EnvConfig::default()
        };
        let robot = robot_at(Vec2::default(), Vec2::new(4.0, 0.0), &cfg);
        let ped = ped_at(0, Vec2::new(0.65, 0.0), Vec2::new(0.65, 0.0));
        let mut sim = CrowdSim::from_parts(cfg, robot, vec![ped], 7);
        let out = sim.step(Action::new(0, false).unwrap()).unwrap();
        assert_eq!(out.terminal, Terminal::Collision);
        assert_eq!(out.reward_env, -0.25);
    }

    #[test]
    fn goal_takes_precedence_over_collision() {
        let cfg = EnvConfig {
            n: 1,
            ..EnvConfig::default()
        };
        let goal = Vec2::new(0.25, 0.0);
        let robot = robot_at(Vec2::default(), goal, &cfg);
        // A pedestrian parked on the goal: arriving both reaches the goal
        // and violates the collision predicate.
        let ped = ped_at(0, goal, goal);
        let mut sim = CrowdSim::from_parts(cfg, robot, vec![ped], 7);
        let out = sim.step(Action::new(0, false).unwrap()).unwrap();
        assert_eq!(out.terminal, Terminal::Goal);
        assert!(out.reward_env > 0.9);
    }

    #[test]
    fn stepping_after_terminal_is_an_error() {
        let cfg = EnvConfig {
            n: 0,
            ..EnvConfig::default()
        };
        let robot = robot_at(Vec2::default(), Vec2::new(0.2, 0.0), &cfg);
        let mut sim = CrowdSim::from_parts(cfg, robot, vec![], 7);
        let out = sim.step(Action::STILL).unwrap();
        assert_eq!(out.terminal, Terminal::Goal);
        assert!(sim.step(Action::STILL).is_err());
    }

    #[test]
    fn timeout_after_t_lim() {
        let cfg = EnvConfig {
            n: 0,
            ..EnvConfig::default()
        };
        let robot = robot_at(Vec2::default(), Vec2::new(10.0, 0.0), &cfg);
        let mut sim = CrowdSim::from_parts(cfg.clone(), robot, vec![], 7);
        let mut terminal = Terminal::None;
        let mut steps = 0;
        while !terminal.is_over() {
            terminal = sim.step(Action::STILL).unwrap().terminal;
            steps += 1;
        }
        assert_eq!(terminal, Terminal::Timeout);
        assert_eq!(steps, (cfg.t_lim / cfg.dt).round() as u32);
    }

    #[test]
    fn observation_hides_goals_and_orders_by_distance() {
        let cfg = EnvConfig {
            n: 3,
            ..EnvConfig::default()
        };
        let robot = robot_at(Vec2::default(), Vec2::new(4.0, 0.0), &cfg);
        let peds = vec![
            ped_at(0, Vec2::new(3.0, 0.0), Vec2::new(9.0, 9.0)),
            ped_at(1, Vec2::new(1.0, 0.0), Vec2::new(9.0, 9.0)),
            ped_at(2, Vec2::new(2.0, 0.0), Vec2::new(9.0, 9.0)),
        ];
        let sim = CrowdSim::from_parts(cfg, robot, peds, 7);
        let obs = sim.observe();
        let distances: Vec<f64> = obs.pedestrians.iter().map(|p| p.distance).collect();
        assert_eq!(distances, vec![1.0, 2.0, 3.0]);
        for p in &obs.pedestrians {
            assert!((p.distance - (p.position - obs.robot.position).norm()).abs() < 1e-12);
        }
        assert_eq!(sim.observe(), obs);
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let cfg = EnvConfig {
            n: 5,
            ..EnvConfig::default()
        };
        let actions: Vec<Action> = (0..30)
            .map(|k| Action::new((k % 8) as u8, k % 3 == 0).unwrap())
            .collect();
        let run = || {
            let mut sim = CrowdSim::new(cfg.clone(), 1234).unwrap();
            let mut history = Vec::new();
            for a in &actions {
                let out = sim.step(*a).unwrap();
                history.push((out.next_state.clone(), out.reward, out.terminal));
                if out.terminal.is_over() {
                    break;
                }
            }
            history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reward_components_add_up_and_stay_bounded() {
        let cfg = EnvConfig {
            n: 8,
            ..EnvConfig::default()
        };
        let mut sim = CrowdSim::new(cfg, 5).unwrap();
        let actions = action_set(PolicyMode::L2b);
        let mut rng = crate::seed::stream_rng(5, "reward-bounds-test", 0);
        loop {
            let a = actions[rng.gen_range(0..actions.len())];
            let out = sim.step(a).unwrap();
            assert_eq!(out.reward, out.reward_env + out.reward_social);
            assert!(out.reward >= -0.45 - 1e-12 && out.reward <= 1.0 + 1e-12);
            if out.terminal.is_over() {
                break;
            }
        }
    }
}
