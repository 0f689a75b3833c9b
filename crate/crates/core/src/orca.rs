//! Optimal Reciprocal Collision Avoidance.
//!
//! Each agent turns every neighbor into a half-plane constraint in velocity
//! space (the velocity obstacle truncated at `time_horizon`, with the
//! avoidance responsibility split evenly between the pair) and then picks the
//! feasible velocity closest to its preferred velocity by solving a small
//! linear program over the constraint set intersected with the speed disc.
//! When the constraints are jointly infeasible the solver falls back to the
//! least-penetration velocity.
//!
//! This is the fixed policy that drives every pedestrian in the simulator and
//! the teacher used to bootstrap the robot's value function.

use crate::vec2::Vec2;

const EPSILON: f64 = 1e-10;

/// Default truncation horizon for agent-agent constraints, in seconds.
pub const DEFAULT_TIME_HORIZON: f64 = 5.0;

/// Magnitude of the deterministic preferred-velocity rotation used to break
/// exactly symmetric encounters (radians). The sign is derived from the
/// episode seed by the caller.
pub const TIE_BREAK_ROTATION: f64 = 1e-3;

/// Kinematic disc agent as seen by the solver.
#[derive(Debug, Clone, Copy)]
pub struct Disc {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub pref_velocity: Vec2,
    pub max_speed: f64,
}

/// Half-plane constraint in velocity space. Velocities `v` with
/// `direction × (v - point) >= 0` (left of the directed line) are permitted.
#[derive(Debug, Clone, Copy)]
pub struct OrcaLine {
    pub point: Vec2,
    pub direction: Vec2,
}

impl OrcaLine {
    pub fn permits(&self, v: Vec2) -> bool {
        self.direction.cross(v - self.point) >= 0.0
    }
}

/// Parameters shared by all agents in one simulation step.
#[derive(Debug, Clone, Copy)]
pub struct OrcaParams {
    pub time_horizon: f64,
    /// Signed rotation applied to every preferred velocity before solving.
    pub tie_break_rotation: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        OrcaParams {
            time_horizon: DEFAULT_TIME_HORIZON,
            tie_break_rotation: TIE_BREAK_ROTATION,
        }
    }
}

/// Builds one half-plane constraint per neighbor for `agent`.
///
/// Non-overlapping neighbors induce the velocity obstacle truncated at
/// `time_horizon`; already-overlapping neighbors get a separating constraint
/// that resolves the contact within one `dt`.
pub fn compute_orca_lines(
    agent: &Disc,
    neighbors: &[Disc],
    time_horizon: f64,
    dt: f64,
) -> Vec<OrcaLine> {
    debug_assert!(time_horizon > 0.0 && dt > 0.0);
    neighbors
        .iter()
        .map(|other| orca_line_for_pair(agent, other, time_horizon, dt))
        .collect()
}

fn orca_line_for_pair(agent: &Disc, other: &Disc, time_horizon: f64, dt: f64) -> OrcaLine {
    let relative_position = other.position - agent.position;
    let relative_velocity = agent.velocity - other.velocity;
    let dist_sq = relative_position.norm_sq();
    let combined_radius = agent.radius + other.radius;
    let combined_radius_sq = combined_radius * combined_radius;

    let direction;
    let u;

    if dist_sq > combined_radius_sq {
        // No current overlap: constrain against the velocity obstacle
        // truncated at time_horizon.
        let inv_horizon = 1.0 / time_horizon;
        // Vector from the cutoff-circle center to the relative velocity.
        let w = relative_velocity - inv_horizon * relative_position;
        let w_len_sq = w.norm_sq();

        let dot = w.dot(relative_position);
        if dot < 0.0 && dot * dot > combined_radius_sq * w_len_sq {
            // Closest point is on the cutoff circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = if w_len > EPSILON {
                w / w_len
            } else {
                relative_position.normalized_or(Vec2::new(1.0, 0.0)) * -1.0
            };
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = (combined_radius * inv_horizon - w_len) * unit_w;
        } else {
            // Closest point is on one of the cone legs.
            let leg = (dist_sq - combined_radius_sq).sqrt();
            if relative_position.cross(w) > 0.0 {
                direction = Vec2::new(
                    relative_position.x * leg - relative_position.y * combined_radius,
                    relative_position.x * combined_radius + relative_position.y * leg,
                ) / dist_sq;
            } else {
                direction = -Vec2::new(
                    relative_position.x * leg + relative_position.y * combined_radius,
                    -relative_position.x * combined_radius + relative_position.y * leg,
                ) / dist_sq;
            }
            u = relative_velocity.dot(direction) * direction - relative_velocity;
        }
    } else {
        // Overlap: push apart so contact resolves within one time step.
        let inv_dt = 1.0 / dt;
        let w = relative_velocity - inv_dt * relative_position;
        let w_len = w.norm();
        let unit_w = if w_len > EPSILON {
            w / w_len
        } else if dist_sq > EPSILON * EPSILON {
            // Stationary coincident velocities: separate along the center line.
            -relative_position / dist_sq.sqrt()
        } else {
            // Fully degenerate pair; any fixed direction keeps the step total.
            Vec2::new(1.0, 0.0)
        };
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = (combined_radius * inv_dt - w_len) * unit_w;
    }

    // Each agent of the pair takes half of the correction.
    OrcaLine {
        point: agent.velocity + 0.5 * u,
        direction,
    }
}

/// Picks the velocity closest to `pref_velocity` inside the speed disc that
/// satisfies every line; falls back to the least-penetration velocity when
/// the constraint set is infeasible. Never panics.
pub fn solve_velocity(lines: &[OrcaLine], pref_velocity: Vec2, max_speed: f64) -> Vec2 {
    debug_assert!(max_speed > 0.0);
    let mut result = Vec2::default();
    let failed = solve_feasible(lines, max_speed, pref_velocity, false, &mut result);
    if failed < lines.len() {
        relax_infeasible(lines, failed, max_speed, &mut result);
    }
    result
}

/// Steps every agent simultaneously from the same pre-step snapshot and
/// returns one new velocity per agent.
pub fn orca_policy_step(agents: &[Disc], dt: f64, params: &OrcaParams) -> Vec<Vec2> {
    let mut velocities = Vec::with_capacity(agents.len());
    let mut neighbors = Vec::with_capacity(agents.len().saturating_sub(1));
    for (i, agent) in agents.iter().enumerate() {
        neighbors.clear();
        neighbors.extend(
            agents
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, a)| *a),
        );
        let lines = compute_orca_lines(agent, &neighbors, params.time_horizon, dt);
        let pref = agent.pref_velocity.rotated(params.tie_break_rotation);
        velocities.push(solve_velocity(&lines, pref, agent.max_speed));
    }
    velocities
}

/// Optimizes along the boundary of line `index` subject to the preceding
/// lines and the speed disc. Returns false when that segment is empty.
fn project_on_line(
    lines: &[OrcaLine],
    index: usize,
    max_speed: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> bool {
    let line = lines[index];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + max_speed * max_speed - line.point.norm_sq();
    if discriminant < 0.0 {
        // Line misses the speed disc entirely.
        return false;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for prev in &lines[..index] {
        let denominator = line.direction.cross(prev.direction);
        let numerator = prev.direction.cross(line.point - prev.point);
        if denominator.abs() <= EPSILON {
            // Parallel lines: keep only if this one is not fully excluded.
            if numerator < 0.0 {
                return false;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    if direction_opt {
        if opt_velocity.dot(line.direction) > 0.0 {
            *result = line.point + t_right * line.direction;
        } else {
            *result = line.point + t_left * line.direction;
        }
    } else {
        let t = line.direction.dot(opt_velocity - line.point);
        *result = line.point + t.clamp(t_left, t_right) * line.direction;
    }
    true
}

/// Sequential insertion solve. Returns `lines.len()` on success, or the index
/// of the first line whose constraint could not be satisfied.
fn solve_feasible(
    lines: &[OrcaLine],
    max_speed: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> usize {
    if direction_opt {
        // opt_velocity is a unit direction; start at the disc boundary.
        *result = opt_velocity * max_speed;
    } else if opt_velocity.norm_sq() > max_speed * max_speed {
        *result = opt_velocity.normalized_or(Vec2::new(1.0, 0.0)) * max_speed;
    } else {
        *result = opt_velocity;
    }

    for i in 0..lines.len() {
        if lines[i].direction.cross(lines[i].point - *result) > 0.0 {
            let saved = *result;
            if !project_on_line(lines, i, max_speed, opt_velocity, direction_opt, result) {
                *result = saved;
                return i;
            }
        }
    }
    lines.len()
}

/// 3-D-lifted fallback: minimizes the maximum constraint penetration starting
/// from the line that first failed.
fn relax_infeasible(lines: &[OrcaLine], begin: usize, max_speed: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if lines[i].direction.cross(lines[i].point - *result) > distance {
            let mut projected: Vec<OrcaLine> = Vec::with_capacity(i);
            for j in 0..i {
                let determinant = lines[i].direction.cross(lines[j].direction);
                let point = if determinant.abs() <= EPSILON {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        // Same orientation: line j is redundant here.
                        continue;
                    }
                    0.5 * (lines[i].point + lines[j].point)
                } else {
                    lines[i].point
                        + (lines[j].direction.cross(lines[i].point - lines[j].point)
                            / determinant)
                            * lines[i].direction
                };
                let direction = (lines[j].direction - lines[i].direction)
                    .normalized_or(lines[i].direction.perp());
                projected.push(OrcaLine { point, direction });
            }

            let saved = *result;
            let along = Vec2::new(-lines[i].direction.y, lines[i].direction.x);
            if solve_feasible(&projected, max_speed, along, true, result) < projected.len() {
                // Should not happen by construction; keep the best-so-far.
                *result = saved;
            }
            distance = lines[i].direction.cross(lines[i].point - *result);
        }
    }
}
