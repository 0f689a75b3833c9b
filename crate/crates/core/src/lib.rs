//! Crowd-navigation simulator and value-learning stack.
//!
//! A robot crosses a circle-crossing crowd. It can passively avoid
//! pedestrians or actively clear its path with a beep that makes nearby
//! pedestrians move away. Training balances the two through a reward that
//! penalizes both crowding people and over-using the beep.
//!
//! Modules:
//! - [`orca`]: reciprocal collision avoidance (the fixed crowd policy and
//!   the demonstration teacher).
//! - [`ervo`]: beep-induced pedestrian reactions.
//! - [`env`]: scenario generation, joint state, rewards, episode stepping.
//! - [`valuenet`]: attention-based value function with analytic gradients.
//! - [`rl`]: lookahead policy, replay, TD training and imitation bootstrap.
//! - [`eval`]: seeded evaluation harness, sweep tables, trajectory plots.

pub mod env;
pub mod ervo;
pub mod eval;
pub mod orca;
pub mod rl;
pub mod seed;
pub mod trace;
pub mod valuenet;
pub mod vec2;

pub use vec2::Vec2;
