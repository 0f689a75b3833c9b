//! Beep-induced pedestrian reactions.
//!
//! When the robot emits a path-clearing beep, pedestrians inside the frontal
//! half-circle of radius `range` pick up a Gaussian influence value and
//! override their preferred velocity to flee radially away from the robot.
//! Collision avoidance still runs on top of the override, so fleeing
//! pedestrians do not walk through each other.

use crate::orca::Disc;
use crate::vec2::Vec2;

/// One path-clearing beep, valid for a single simulation step.
#[derive(Debug, Clone, Copy)]
pub struct BeepEvent {
    pub active: bool,
    pub robot_position: Vec2,
    /// Unit heading that orients the frontal half-circle.
    pub robot_heading: Vec2,
    /// Effective range of the beep, in meters.
    pub range: f64,
    /// Seed-derived unit direction used when a pedestrian exactly coincides
    /// with the robot and the radial escape direction is undefined.
    pub fallback_dir: Vec2,
}

impl BeepEvent {
    pub fn inactive() -> Self {
        BeepEvent {
            active: false,
            robot_position: Vec2::default(),
            robot_heading: Vec2::new(1.0, 0.0),
            range: 1.0,
            fallback_dir: Vec2::new(1.0, 0.0),
        }
    }
}

/// True when `ped_position` falls inside the active influence region: closer
/// than `range` and in the frontal half-plane of the robot heading.
pub fn in_influence_region(ped_position: Vec2, beep: &BeepEvent) -> bool {
    if !beep.active {
        return false;
    }
    let offset = ped_position - beep.robot_position;
    offset.norm() < beep.range && offset.dot(beep.robot_heading) >= 0.0
}

/// Gaussian influence magnitude at `ped_position`; zero outside the region.
pub fn influence(ped_position: Vec2, beep: &BeepEvent) -> f64 {
    if !in_influence_region(ped_position, beep) {
        return 0.0;
    }
    let d_sq = (ped_position - beep.robot_position).norm_sq();
    let r = beep.range;
    (1.0 / ((2.0 * std::f64::consts::PI).sqrt() * r)) * (-d_sq / (2.0 * r * r)).exp()
}

/// Escape velocity override for an influenced pedestrian: magnitude equal to
/// the influence value, direction radially away from the robot. `None` when
/// the pedestrian keeps its own velocity.
pub fn escape_velocity(ped: &Disc, beep: &BeepEvent) -> Option<Vec2> {
    if !in_influence_region(ped.position, beep) {
        return None;
    }
    let gamma = influence(ped.position, beep);
    let offset = ped.position - beep.robot_position;
    let d = offset.norm();
    let radial = if d > 1e-9 {
        offset / d
    } else {
        beep.fallback_dir
    };
    Some(radial * gamma)
}
