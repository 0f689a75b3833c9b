//! Robot-centric input features.
//!
//! The joint state is expressed in a frame centered on the robot with the
//! x-axis pointing at the goal, which makes the value function invariant to
//! rigid rotations of the world. Each pedestrian contributes one row holding
//! the robot self-state followed by that pedestrian's observable state.

use crate::env::JointState;
use crate::vec2::Vec2;

/// Entries per feature row:
/// `[d_g, v_pref, v_x, v_y, r_c, r_b, px, py, vx, vy, r, d, r_sum]`.
pub const FEATURE_DIM: usize = 13;
/// Leading entries that describe the robot itself.
pub const SELF_STATE_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedFeature(pub [f64; FEATURE_DIM]);

impl RotatedFeature {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Rewrites the joint state as one feature row per pedestrian. A scene with
/// no pedestrians yields a single sentinel row whose pedestrian entries are
/// all zero.
pub fn rotate(state: &JointState) -> Vec<RotatedFeature> {
    let robot = &state.robot;
    let to_goal = robot.goal - robot.position;
    let goal_distance = to_goal.norm();
    // Degenerate at the goal: fall back to the heading so the frame stays
    // defined (and still co-rotates with the world).
    let ex = if goal_distance > 1e-12 {
        to_goal / goal_distance
    } else {
        robot.heading.normalized_or(Vec2::new(1.0, 0.0))
    };
    let ey = ex.perp();
    let frame = |v: Vec2| Vec2::new(v.dot(ex), v.dot(ey));

    let v_robot = frame(robot.velocity);
    let self_part = [
        goal_distance,
        robot.pref_speed,
        v_robot.x,
        v_robot.y,
        robot.radius,
        robot.beep_range,
    ];

    if state.pedestrians.is_empty() {
        let mut row = [0.0; FEATURE_DIM];
        row[..SELF_STATE_DIM].copy_from_slice(&self_part);
        return vec![RotatedFeature(row)];
    }

    state
        .pedestrians
        .iter()
        .map(|p| {
            let rel = frame(p.position - robot.position);
            let vel = frame(p.velocity);
            let mut row = [0.0; FEATURE_DIM];
            row[..SELF_STATE_DIM].copy_from_slice(&self_part);
            row[6] = rel.x;
            row[7] = rel.y;
            row[8] = vel.x;
            row[9] = vel.y;
            row[10] = p.radius;
            row[11] = p.distance;
            row[12] = robot.radius + p.radius;
            RotatedFeature(row)
        })
        .collect()
}
