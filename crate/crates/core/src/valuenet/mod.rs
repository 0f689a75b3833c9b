//! Attention-based value function: robot-centric features, exact forward and
//! backward passes, Adam updates, and versioned checkpoints.

mod checkpoint;
mod feature;
mod net;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT_VERSION};
pub use feature::{rotate, RotatedFeature, FEATURE_DIM, SELF_STATE_DIM};
pub use net::{
    ForwardTape, NetError, NetShape, ValueNet, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};

use crate::env::JointState;

impl ValueNet {
    /// Value of a joint state (feature transform plus forward pass).
    pub fn state_value(&self, state: &JointState) -> Result<f64, NetError> {
        self.value(&rotate(state))
    }
}
