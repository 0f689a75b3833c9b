use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment parameters. Field names are mirrored one-to-one by the
/// `[env]` section of the config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Number of pedestrians in the scenario.
    pub n: usize,
    /// Radius of the circle all agents start on, in meters.
    pub circle_radius: f64,
    /// Simulation step, in seconds.
    pub dt: f64,
    /// Episode time limit, in seconds.
    pub t_lim: f64,
    /// Preferred robot speed, in m/s.
    pub v_pref: f64,
    /// Robot body radius, in meters.
    pub robot_radius: f64,
    /// Pedestrian body radius, in meters.
    pub ped_radius: f64,
    /// Effective range of the path-clearing beep, in meters.
    pub beep_range: f64,
    /// Discomfort clearance below which the robot is penalized, in meters.
    pub d_disc: f64,
    /// Goal-reward decay coefficient.
    pub alpha: f64,
    /// Beep-cost coefficient.
    pub beta: f64,
    /// Discomfort-cost coefficient.
    pub eta: f64,
    /// Root seed recorded with the scenario stream.
    pub seed: u64,
    /// Half-width of the uniform placement noise, in meters.
    pub noise_half_width: f64,
    /// Whether pedestrians include the robot in their avoidance constraints.
    pub robot_visible: bool,
    /// Pedestrian speed cap, in m/s.
    pub ped_max_speed: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n: 5,
            circle_radius: 4.0,
            dt: 0.25,
            t_lim: 25.0,
            v_pref: 1.0,
            robot_radius: 0.3,
            ped_radius: 0.3,
            beep_range: 1.0,
            d_disc: 0.2,
            alpha: 0.1,
            beta: 0.2,
            eta: 0.5,
            seed: 0,
            noise_half_width: 0.5,
            robot_visible: false,
            ped_max_speed: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn require(ok: bool, field: &'static str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            field,
            message: message.into(),
        })
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require(
            self.eta > self.beta,
            "eta",
            format!(
                "discomfort must be penalized more heavily than beeping: eta ({}) must exceed beta ({})",
                self.eta, self.beta
            ),
        )?;
        require(self.circle_radius > 0.0, "circle_radius", "must be positive")?;
        require(self.dt > 0.0, "dt", "must be positive")?;
        require(self.t_lim > 0.0, "t_lim", "must be positive")?;
        require(self.v_pref > 0.0, "v_pref", "must be positive")?;
        require(self.robot_radius > 0.0, "robot_radius", "must be positive")?;
        require(self.ped_radius > 0.0, "ped_radius", "must be positive")?;
        require(self.beep_range > 0.0, "beep_range", "must be positive")?;
        require(self.d_disc > 0.0, "d_disc", "must be positive")?;
        require(self.alpha > 0.0, "alpha", "must be positive")?;
        require(self.beta >= 0.0, "beta", "must be non-negative")?;
        require(
            self.noise_half_width >= 0.0,
            "noise_half_width",
            "must be non-negative",
        )?;
        require(self.ped_max_speed > 0.0, "ped_max_speed", "must be positive")?;
        Ok(())
    }
}
