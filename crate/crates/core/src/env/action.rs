use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

/// Number of evenly spaced movement headings.
pub const NUM_HEADINGS: u8 = 8;
/// Direction index reserved for standing still.
pub const STILL_INDEX: u8 = NUM_HEADINGS;

/// One discrete robot action: a heading (or standing still) plus an optional
/// path-clearing beep. The single still action never beeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    direction_index: u8,
    beep: bool,
}

impl Action {
    pub const STILL: Action = Action {
        direction_index: STILL_INDEX,
        beep: false,
    };

    /// `direction_index` in `0..=8`; index 8 is the still action, which
    /// cannot carry a beep.
    pub fn new(direction_index: u8, beep: bool) -> Option<Action> {
        if direction_index > STILL_INDEX || (direction_index == STILL_INDEX && beep) {
            return None;
        }
        Some(Action {
            direction_index,
            beep,
        })
    }

    pub fn direction_index(&self) -> u8 {
        self.direction_index
    }

    pub fn beep(&self) -> bool {
        self.beep
    }

    pub fn is_still(&self) -> bool {
        self.direction_index == STILL_INDEX
    }

    /// Unit heading of the commanded direction; `None` when standing still.
    pub fn heading(&self) -> Option<Vec2> {
        if self.is_still() {
            None
        } else {
            let angle = std::f64::consts::TAU * f64::from(self.direction_index)
                / f64::from(NUM_HEADINGS);
            Some(Vec2::new(angle.cos(), angle.sin()))
        }
    }

    /// Commanded velocity at the given preferred speed.
    pub fn velocity(&self, v_pref: f64) -> Vec2 {
        self.heading().map_or(Vec2::default(), |h| h * v_pref)
    }
}

/// Which action space the robot policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Passive avoidance only: still plus eight headings (9 actions).
    Sarl,
    /// Adds a beeping variant of each heading (17 actions).
    L2b,
}

impl PolicyMode {
    pub fn action_count(&self) -> usize {
        match self {
            PolicyMode::Sarl => 9,
            PolicyMode::L2b => 17,
        }
    }
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyMode::Sarl => write!(f, "sarl"),
            PolicyMode::L2b => write!(f, "l2b"),
        }
    }
}

impl std::str::FromStr for PolicyMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sarl" => Ok(PolicyMode::Sarl),
            "l2b" => Ok(PolicyMode::L2b),
            other => Err(format!("unknown mode `{other}` (expected `sarl` or `l2b`)")),
        }
    }
}

/// Canonical ordered action set for a mode. The still action has index 0;
/// ties in the lookahead policy resolve toward the lowest index.
pub fn action_set(mode: PolicyMode) -> Vec<Action> {
    let mut actions = vec![Action::STILL];
    for k in 0..NUM_HEADINGS {
        actions.push(Action::new(k, false).unwrap());
    }
    if mode == PolicyMode::L2b {
        for k in 0..NUM_HEADINGS {
            actions.push(Action::new(k, true).unwrap());
        }
    }
    debug_assert_eq!(actions.len(), mode.action_count());
    actions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_never_beeps() {
        assert!(Action::new(STILL_INDEX, true).is_none());
        assert!(Action::new(9, false).is_none());
        assert_eq!(Action::new(STILL_INDEX, false), Some(Action::STILL));
    }

    #[test]
    fn action_space_sizes() {
        assert_eq!(action_set(PolicyMode::Sarl).len(), 9);
        assert_eq!(action_set(PolicyMode::L2b).len(), 17);
    }

    #[test]
    fn headings_are_evenly_spaced_units() {
        for k in 0..NUM_HEADINGS {
            let h = Action::new(k, false).unwrap().heading().unwrap();
            assert!((h.norm() - 1.0).abs() < 1e-12);
        }
        let east = Action::new(0, false).unwrap().heading().unwrap();
        assert!((east.x - 1.0).abs() < 1e-12);
        let north = Action::new(2, false).unwrap().heading().unwrap();
        assert!((north.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn still_velocity_is_zero() {
        assert_eq!(Action::STILL.velocity(1.0), Vec2::default());
    }

    #[test]
    fn sarl_set_has_no_beeps() {
        assert!(action_set(PolicyMode::Sarl).iter().all(|a| !a.beep()));
    }
}
