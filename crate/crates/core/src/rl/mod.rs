//! Training pipeline: one-step-lookahead greedy policy, epsilon-greedy
//! exploration, imitation bootstrap from collision-avoidance demonstrations,
//! and TD(0) value learning with experience replay and a fixed target
//! network, including the small-to-large crowd curriculum.

mod replay;
mod rollout;

pub use replay::{ReplayBuffer, Transition};
pub use rollout::{
    discounted_labels, rollout_training_episode, rollout_with_policy, EpisodeRecord,
    GreedyValuePolicy, OrcaTeacher, RobotCommand, RobotPolicy, TrainingRollout,
};

use crate::env::{
    reward_env, reward_social, Action, CrowdSim, EnvConfig, EnvError, JointState,
    ObservedPedestrian, OutcomeFlags, PolicyMode, RobotState, Terminal,
};
use crate::ervo::{self, BeepEvent};
use crate::orca::Disc;
use crate::seed;
use crate::valuenet::{rotate, Checkpoint, NetError, NetShape, RotatedFeature, ValueNet};
use crate::vec2::Vec2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("lookahead needs a non-empty action set")]
    EmptyActionSet,
    #[error("training diverged: {context}")]
    Diverged { context: String },
    #[error("checkpoint was trained in {found} mode but the run is configured for {expected}")]
    ModeMismatch { expected: PolicyMode, found: PolicyMode },
    #[error("invalid training config: field `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
}

/// Training parameters. Field names are mirrored one-to-one by the `[train]`
/// section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub imitation_episodes: u64,
    pub imitation_lr: f64,
    pub imitation_epochs: u32,
    pub rl_lr: f64,
    pub batch: usize,
    pub rl_episodes: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_episodes: u64,
    /// Episode at which curriculum scenarios switch to the full crowd size.
    pub curriculum_switch: u64,
    /// Crowd size used before the switch (only when smaller than the target).
    pub curriculum_start_n: usize,
    /// Optimization steps between target-network syncs.
    pub target_sync_interval: u64,
    pub buffer_capacity: usize,
    /// Optimization passes performed after each episode.
    pub optim_steps_per_episode: u32,
    /// Episodes between periodic checkpoints.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.9,
            imitation_episodes: 3000,
            imitation_lr: 0.01,
            imitation_epochs: 50,
            rl_lr: 0.001,
            batch: 100,
            rl_episodes: 20_000,
            eps_start: 0.5,
            eps_end: 0.1,
            eps_decay_episodes: 5000,
            curriculum_switch: 10_000,
            curriculum_start_n: 10,
            target_sync_interval: 50,
            buffer_capacity: 100_000,
            optim_steps_per_episode: 1,
            checkpoint_interval: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |field: &'static str, message: String| RlError::InvalidConfig { field, message };
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(bad("gamma", format!("must be in [0, 1), got {}", self.gamma)));
        }
        for (field, eps) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(bad(field, format!("must be in [0, 1], got {eps}")));
            }
        }
        if self.batch == 0 {
            return Err(bad("batch", "must be at least 1".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(bad("buffer_capacity", "must be at least 1".into()));
        }
        if self.target_sync_interval == 0 {
            return Err(bad("target_sync_interval", "must be at least 1".into()));
        }
        if self.imitation_lr <= 0.0 || self.rl_lr <= 0.0 {
            return Err(bad("imitation_lr", "learning rates must be positive".into()));
        }
        if self.curriculum_start_n == 0 {
            return Err(bad("curriculum_start_n", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// Exploration rate at `episode`: linear from `eps_start` to `eps_end` over
/// the decay window, flat afterwards.
pub fn epsilon_at(cfg: &TrainConfig, episode: u64) -> f64 {
    if cfg.eps_decay_episodes == 0 || episode >= cfg.eps_decay_episodes {
        cfg.eps_end
    } else {
        let frac = episode as f64 / cfg.eps_decay_episodes as f64;
        cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
    }
}

/// Crowd size for `episode`: the curriculum trains on a smaller crowd before
/// the switch when the target crowd is larger.
pub fn curriculum_n(cfg: &TrainConfig, target_n: usize, episode: u64) -> usize {
    if cfg.curriculum_start_n < target_n && episode < cfg.curriculum_switch {
        cfg.curriculum_start_n
    } else {
        target_n
    }
}

/// Per-step discount factor `gamma^(dt * v_pref)`.
pub fn step_discount(gamma: f64, dt: f64, v_pref: f64) -> f64 {
    gamma.powf(dt * v_pref)
}

/// A state-value estimate. The trained network implements it; tests plug in
/// closed-form oracles through [`ValueFn`].
pub trait ValueEstimate {
    fn state_value(&self, state: &JointState) -> Result<f64, RlError>;

    /// Values of several states; implementations may batch the evaluation.
    fn state_values(&self, states: &[JointState]) -> Result<Vec<f64>, RlError> {
        states.iter().map(|s| self.state_value(s)).collect()
    }
}

impl ValueEstimate for ValueNet {
    fn state_value(&self, state: &JointState) -> Result<f64, RlError> {
        Ok(ValueNet::state_value(self, state)?)
    }

    fn state_values(&self, states: &[JointState]) -> Result<Vec<f64>, RlError> {
        let rows: Vec<Vec<RotatedFeature>> = states.iter().map(rotate).collect();
        let samples: Vec<&[RotatedFeature]> = rows.iter().map(Vec::as_slice).collect();
        Ok(self.values_batched(&samples)?)
    }
}

/// Wraps a closure as a value estimate.
pub struct ValueFn<F>(pub F);

impl<F: Fn(&JointState) -> f64> ValueEstimate for ValueFn<F> {
    fn state_value(&self, state: &JointState) -> Result<f64, RlError> {
        Ok((self.0)(state))
    }
}

/// One-step transition model used inside the lookahead: the robot moves at
/// the commanded velocity for one step, every pedestrian keeps its current
/// velocity unless the predicted beep would make it flee, and the reward is
/// evaluated on the predicted post-step state.
pub fn predict_next_state(
    state: &JointState,
    action: Action,
    cfg: &EnvConfig,
) -> (JointState, f64) {
    let robot = &state.robot;
    let velocity = action.velocity(cfg.v_pref);
    let heading = if velocity.norm_sq() > 0.0 {
        velocity.normalized_or(robot.heading)
    } else {
        robot.heading
    };
    let next_pos = robot.position + velocity * cfg.dt;
    let beep = BeepEvent {
        active: action.beep(),
        robot_position: robot.position,
        robot_heading: heading,
        range: cfg.beep_range,
        fallback_dir: heading,
    };
    let pedestrians: Vec<ObservedPedestrian> = state
        .pedestrians
        .iter()
        .map(|p| {
            let disc = Disc {
                position: p.position,
                velocity: p.velocity,
                radius: p.radius,
                pref_velocity: Vec2::default(),
                max_speed: cfg.ped_max_speed,
            };
            let v = ervo::escape_velocity(&disc, &beep).unwrap_or(p.velocity);
            let pos = p.position + v * cfg.dt;
            ObservedPedestrian {
                position: pos,
                velocity: v,
                distance: (pos - next_pos).norm(),
                radius: p.radius,
            }
        })
        .collect();
    let next = JointState {
        robot: RobotState {
            position: next_pos,
            velocity,
            heading,
            ..*robot
        },
        pedestrians,
        time: state.time + cfg.dt,
    };
    let flags = OutcomeFlags {
        goal_reached: next.robot.goal_distance() < cfg.robot_radius,
        collided: next.min_clearance() <= 0.0,
    };
    let reward = reward_env(&next, flags, cfg) + reward_social(&next, action, cfg);
    (next, reward)
}

/// Greedy one-step-lookahead action: maximizes immediate reward plus the
/// discounted value of the predicted next state. Ties resolve to the lowest
/// action index.
pub fn lookahead_policy<V: ValueEstimate>(
    value: &V,
    state: &JointState,
    actions: &[Action],
    cfg: &EnvConfig,
    gamma: f64,
) -> Result<Action, RlError> {
    if actions.is_empty() {
        return Err(RlError::EmptyActionSet);
    }
    let discount = step_discount(gamma, cfg.dt, cfg.v_pref);
    let mut rewards = Vec::with_capacity(actions.len());
    let mut next_states = Vec::with_capacity(actions.len());
    for &action in actions {
        let (next, reward) = predict_next_state(state, action, cfg);
        rewards.push(reward);
        next_states.push(next);
    }
    let values = value.state_values(&next_states)?;
    let mut best: Option<(f64, Action)> = None;
    for ((&action, reward), v) in actions.iter().zip(rewards).zip(values) {
        let score = reward + discount * v;
        if best.map_or(true, |(b, _)| score > b) {
            best = Some((score, action));
        }
    }
    Ok(best.expect("non-empty action set").1)
}

/// Uniform random action with probability `epsilon`, otherwise the policy
/// action. The policy action is computed lazily so exploration steps skip
/// the lookahead entirely.
pub fn epsilon_greedy<R: Rng>(
    policy_action: impl FnOnce() -> Result<Action, RlError>,
    actions: &[Action],
    epsilon: f64,
    rng: &mut R,
) -> Result<Action, RlError> {
    if actions.is_empty() {
        return Err(RlError::EmptyActionSet);
    }
    if rng.gen::<f64>() < epsilon {
        Ok(actions[rng.gen_range(0..actions.len())])
    } else {
        policy_action()
    }
}

/// TD(0) regression target: the reward, plus the discounted target-network
/// value of the next state for non-terminal transitions.
pub fn td_target<V: ValueEstimate>(
    transition: &Transition,
    target: &V,
    gamma: f64,
    dt: f64,
    v_pref: f64,
) -> Result<f64, RlError> {
    if transition.terminal {
        Ok(transition.reward)
    } else {
        let v = target.state_value(&transition.next_state)?;
        Ok(transition.reward + step_discount(gamma, dt, v_pref) * v)
    }
}

/// Everything a training run needs. The root seed drives all named streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSetup {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub mode: PolicyMode,
    pub seed: u64,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<(), RlError> {
        self.env.validate().map_err(|e| RlError::InvalidConfig {
            field: "env",
            message: e.to_string(),
        })?;
        self.train.validate()
    }
}

/// Per-episode training log record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub episode: u64,
    #[serde(rename = "return")]
    pub discounted_return: f64,
    pub outcome: Terminal,
    pub steps: u32,
    pub beep_count: u32,
    pub epsilon: f64,
    /// Mean TD loss of the optimization pass; absent until the replay buffer
    /// has data.
    pub loss: Option<f64>,
}

/// Imitation-phase summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImitationReport {
    pub episodes: u64,
    pub samples: usize,
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
}

/// Value-learning driver: imitation bootstrap, then per-episode epsilon-
/// greedy rollouts feeding replayed TD regression against a fixed target.
#[derive(Debug)]
pub struct Trainer {
    setup: TrainSetup,
    actions: Vec<Action>,
    net: ValueNet,
    target: ValueNet,
    replay: ReplayBuffer,
    episodes_done: u64,
    bootstrapped: bool,
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self, RlError> {
        Self::with_net_shape(setup, NetShape::standard())
    }

    pub fn with_net_shape(setup: TrainSetup, shape: NetShape) -> Result<Self, RlError> {
        setup.validate()?;
        let net = ValueNet::init(shape, seed::stream_seed(setup.seed, "init", 0))?;
        let target = net.clone();
        let replay = ReplayBuffer::new(setup.train.buffer_capacity);
        Ok(Trainer {
            actions: crate::env::action_set(setup.mode),
            setup,
            net,
            target,
            replay,
            episodes_done: 0,
            bootstrapped: false,
        })
    }

    /// Starts the reinforcement phase from an already-bootstrapped network.
    /// The imitation phase is mode-independent (the teacher never beeps), so
    /// one bootstrap can seed runs of either mode.
    pub fn with_bootstrapped_net(setup: TrainSetup, net: ValueNet) -> Result<Self, RlError> {
        setup.validate()?;
        let target = net.clone();
        let replay = ReplayBuffer::new(setup.train.buffer_capacity);
        Ok(Trainer {
            actions: crate::env::action_set(setup.mode),
            setup,
            net,
            target,
            replay,
            episodes_done: 0,
            bootstrapped: true,
        })
    }

    /// Resumes from a checkpoint: parameters, Adam moments, and the episode
    /// counter carry over; the replay buffer restarts empty.
    pub fn from_checkpoint(setup: TrainSetup, checkpoint: Checkpoint) -> Result<Self, RlError> {
        setup.validate()?;
        let (net, mode, episodes_done) = checkpoint
            .into_net()
            .map_err(|e| RlError::InvalidConfig {
                field: "checkpoint",
                message: e.to_string(),
            })?;
        if mode != setup.mode {
            return Err(RlError::ModeMismatch {
                expected: setup.mode,
                found: mode,
            });
        }
        let target = net.clone();
        let replay = ReplayBuffer::new(setup.train.buffer_capacity);
        Ok(Trainer {
            actions: crate::env::action_set(setup.mode),
            setup,
            net,
            target,
            replay,
            episodes_done,
            bootstrapped: true,
        })
    }

    pub fn setup(&self) -> &TrainSetup {
        &self.setup
    }

    pub fn net(&self) -> &ValueNet {
        &self.net
    }

    pub fn episodes_done(&self) -> u64 {
        self.episodes_done
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_net(&self.net, self.setup.mode, self.episodes_done)
    }

    /// Collects demonstration episodes driven by the collision-avoidance
    /// teacher (robot visible to the crowd, beep unused), labels every
    /// visited state with its realized discounted return, and regresses the
    /// value net onto the labels.
    pub fn bootstrap(&mut self) -> Result<ImitationReport, RlError> {
        let train = self.setup.train.clone();
        let discount = step_discount(train.gamma, self.setup.env.dt, self.setup.env.v_pref);
        let il_cfg = EnvConfig {
            n: curriculum_n(&train, self.setup.env.n, 0),
            robot_visible: true,
            ..self.setup.env.clone()
        };

        let mut dataset: Vec<(Vec<RotatedFeature>, f64)> = Vec::new();
        for episode in 0..train.imitation_episodes {
            let mut sim = CrowdSim::new(
                il_cfg.clone(),
                seed::stream_seed(self.setup.seed, "il-env", episode),
            )?;
            let teacher = OrcaTeacher {
                tie_break_rotation: sim.tie_break_rotation(),
            };
            let record = rollout_with_policy(&mut sim, &teacher, discount, false)?;
            let labels = discounted_labels(&record.rewards, discount);
            for (state, label) in record.states.iter().zip(&labels) {
                dataset.push((rotate(state), *label));
            }
        }

        let mut first_loss = 0.0;
        let mut last_loss = 0.0;
        for epoch in 0..train.imitation_epochs {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            let mut rng = seed::stream_rng(self.setup.seed, "il-shuffle", u64::from(epoch));
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(train.batch) {
                let batch: Vec<(&[RotatedFeature], f64)> = chunk
                    .iter()
                    .map(|&idx| {
                        let (rows, label) = &dataset[idx];
                        (rows.as_slice(), *label)
                    })
                    .collect();
                let (loss, grad) = self.net.regression_grad(&batch)?;
                epoch_loss += loss * chunk.len() as f64;
                self.net.adam_update(&grad, train.imitation_lr)?;
            }
            epoch_loss /= dataset.len().max(1) as f64;
            if !epoch_loss.is_finite() {
                return Err(RlError::Diverged {
                    context: format!("imitation epoch {epoch} loss is not finite"),
                });
            }
            if epoch == 0 {
                first_loss = epoch_loss;
            }
            last_loss = epoch_loss;
        }

        self.target = self.net.clone();
        self.bootstrapped = true;
        Ok(ImitationReport {
            episodes: train.imitation_episodes,
            samples: dataset.len(),
            first_epoch_loss: first_loss,
            last_epoch_loss: last_loss,
        })
    }

    fn rollout_one(
        setup: &TrainSetup,
        net: &ValueNet,
        actions: &[Action],
        episode: u64,
    ) -> Result<(TrainingRollout, f64), RlError> {
        let epsilon = epsilon_at(&setup.train, episode);
        let cfg = EnvConfig {
            n: curriculum_n(&setup.train, setup.env.n, episode),
            ..setup.env.clone()
        };
        let mut sim = CrowdSim::new(cfg, seed::stream_seed(setup.seed, "rl-env", episode))?;
        let mut explore_rng = seed::stream_rng(setup.seed, "explore", episode);
        let discount = step_discount(setup.train.gamma, setup.env.dt, setup.env.v_pref);
        let rollout = rollout_training_episode(
            &mut sim,
            net,
            actions,
            setup.train.gamma,
            epsilon,
            &mut explore_rng,
            discount,
        )?;
        Ok((rollout, epsilon))
    }

    /// One TD regression pass on a sampled minibatch. Returns the batch loss
    /// or `None` while the replay buffer is still empty.
    pub fn optimize_step(&mut self) -> Result<Option<f64>, RlError> {
        let batch_size = self.setup.train.batch.min(self.replay.len());
        if batch_size == 0 {
            return Ok(None);
        }
        let (_, _, update_index) = self.net.adam_moments();
        let mut rng = seed::stream_rng(self.setup.seed, "replay", update_index);
        let batch = self.replay.sample(batch_size, &mut rng);

        // TD targets, with the bootstrap values of the non-terminal next
        // states evaluated in one batched pass against the frozen target.
        let discount = step_discount(
            self.setup.train.gamma,
            self.setup.env.dt,
            self.setup.env.v_pref,
        );
        let bootstrap_rows: Vec<Vec<RotatedFeature>> = batch
            .iter()
            .filter(|t| !t.terminal)
            .map(|t| rotate(&t.next_state))
            .collect();
        let samples: Vec<&[RotatedFeature]> =
            bootstrap_rows.iter().map(Vec::as_slice).collect();
        let next_values = self.target.values_batched(&samples)?;
        let mut next_values = next_values.into_iter();
        let state_rows: Vec<Vec<RotatedFeature>> =
            batch.iter().map(|t| rotate(&t.state)).collect();
        let regression: Vec<(&[RotatedFeature], f64)> = batch
            .iter()
            .zip(&state_rows)
            .map(|(t, rows)| {
                let y = if t.terminal {
                    t.reward
                } else {
                    t.reward + discount * next_values.next().expect("one value per bootstrap")
                };
                (rows.as_slice(), y)
            })
            .collect();

        let (loss, grad) = self.net.regression_grad(&regression)?;
        if !loss.is_finite() {
            return Err(RlError::Diverged {
                context: format!("TD loss is not finite after {} episodes", self.episodes_done),
            });
        }
        self.net.adam_update(&grad, self.setup.train.rl_lr)?;
        let (_, _, updates) = self.net.adam_moments();
        if updates % self.setup.train.target_sync_interval == 0 {
            self.target = self.net.clone();
        }
        Ok(Some(loss))
    }

    fn absorb_rollout(
        &mut self,
        episode: u64,
        rollout: TrainingRollout,
        epsilon: f64,
    ) -> Result<TrainLogRecord, RlError> {
        let steps = rollout.steps;
        let beep_count = rollout.beep_count;
        let outcome = rollout.outcome;
        let discounted_return = rollout.discounted_return;
        for transition in rollout.transitions {
            self.replay.push(transition);
        }
        let mut loss = None;
        for _ in 0..self.setup.train.optim_steps_per_episode {
            if let Some(l) = self.optimize_step()? {
                loss = Some(l);
            }
        }
        self.episodes_done += 1;
        Ok(TrainLogRecord {
            episode,
            discounted_return,
            outcome,
            steps,
            beep_count,
            epsilon,
            loss,
        })
    }

    /// Runs one reinforcement episode (rollout, replay insert, optimization).
    pub fn run_episode(&mut self) -> Result<TrainLogRecord, RlError> {
        let episode = self.episodes_done;
        let (rollout, epsilon) = Self::rollout_one(&self.setup, &self.net, &self.actions, episode)?;
        self.absorb_rollout(episode, rollout, epsilon)
    }

    /// Runs `count` episodes. With `workers > 1`, rollouts within a group
    /// run on parallel threads against the same parameter snapshot;
    /// optimization stays serialized in episode order. `workers == 1` is the
    /// bit-reproducible sequential path.
    pub fn run_episodes(
        &mut self,
        count: u64,
        workers: usize,
        sink: &mut dyn FnMut(&TrainLogRecord),
    ) -> Result<(), RlError> {
        let workers = workers.max(1);
        let mut remaining = count;
        while remaining > 0 {
            let group = remaining.min(workers as u64);
            let base = self.episodes_done;
            let results: Vec<Result<(TrainingRollout, f64), RlError>> = if group == 1 {
                vec![Self::rollout_one(&self.setup, &self.net, &self.actions, base)]
            } else {
                let setup = &self.setup;
                let net = &self.net;
                let actions = &self.actions;
                std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..group)
                        .map(|k| {
                            scope.spawn(move || Self::rollout_one(setup, net, actions, base + k))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().unwrap()).collect()
                })
            };
            for (k, result) in results.into_iter().enumerate() {
                let (rollout, epsilon) = result?;
                let record = self.absorb_rollout(base + k as u64, rollout, epsilon)?;
                sink(&record);
            }
            remaining -= group;
        }
        Ok(())
    }

    /// Full protocol: imitation bootstrap (unless resumed) followed by the
    /// remaining reinforcement episodes.
    pub fn train(
        &mut self,
        workers: usize,
        sink: &mut dyn FnMut(&TrainLogRecord),
    ) -> Result<Option<ImitationReport>, RlError> {
        let report = if self.bootstrapped {
            None
        } else {
            Some(self.bootstrap()?)
        };
        let remaining = self.setup.train.rl_episodes.saturating_sub(self.episodes_done);
        self.run_episodes(remaining, workers, sink)?;
        Ok(report)
    }
}

/// Convenience wrapper: train from scratch and collect the log in memory.
pub fn train(setup: TrainSetup, workers: usize) -> Result<(ValueNet, Vec<TrainLogRecord>), RlError> {
    let mut trainer = Trainer::new(setup)?;
    let mut log = Vec::new();
    trainer.train(workers, &mut |r| log.push(r.clone()))?;
    Ok((trainer.net, log))
}
