//! Versioned model checkpoints.
//!
//! A checkpoint holds the shape, the parameters, the Adam moments, and the
//! step counters, serialized as JSON. f64 values round-trip exactly through
//! the shortest-representation encoder, so a loaded checkpoint restores
//! bit-identical inference.

use super::net::{NetError, NetShape, ValueNet};
use crate::env::PolicyMode;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("checkpoint does not describe a valid network: {0}")]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mode: PolicyMode,
    pub shape: NetShape,
    /// Episodes completed when the checkpoint was written (imitation
    /// episodes count separately from reinforcement episodes).
    pub rl_episodes_done: u64,
    pub adam_step: u64,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Checkpoint {
    pub fn from_net(net: &ValueNet, mode: PolicyMode, rl_episodes_done: u64) -> Self {
        let (m, v, step) = net.adam_moments();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            mode,
            shape: net.shape().clone(),
            rl_episodes_done,
            adam_step: step,
            params: net.params().to_vec(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
        }
    }

    pub fn into_net(self) -> Result<(ValueNet, PolicyMode, u64), CheckpointError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::Version(self.format_version));
        }
        let net = ValueNet::from_parts(
            self.shape,
            self.params,
            self.adam_m,
            self.adam_v,
            self.adam_step,
        )?;
        Ok((net, self.mode, self.rl_episodes_done))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = serde_json::to_vec(self)?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuenet::feature::{RotatedFeature, FEATURE_DIM};
    use rand::Rng;

    fn small_net() -> ValueNet {
        let shape = NetShape {
            embed: vec![FEATURE_DIM, 8, 6],
            pairwise: vec![6, 4],
            attention: vec![12, 6, 1],
            value: vec![10, 6, 1],
        };
        ValueNet::init(shape, 42).unwrap()
    }

    #[test]
    fn round_trip_restores_bit_identical_inference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut net = small_net();
        // Push the moments away from zero so they round-trip too.
        let grad: Vec<f64> = (0..net.param_count()).map(|k| (k as f64).sin()).collect();
        net.adam_update(&grad, 0.01).unwrap();
        Checkpoint::from_net(&net, PolicyMode::L2b, 17)
            .save(&path)
            .unwrap();

        let (restored, mode, episodes) = Checkpoint::load(&path).unwrap().into_net().unwrap();
        assert_eq!(mode, PolicyMode::L2b);
        assert_eq!(episodes, 17);
        assert_eq!(net.params(), restored.params());

        let mut rng = crate::seed::stream_rng(1, "ckpt-test", 0);
        let rows: Vec<RotatedFeature> = (0..3)
            .map(|_| {
                let mut row = [0.0; FEATURE_DIM];
                for v in &mut row {
                    *v = rng.gen_range(-1.0..1.0);
                }
                RotatedFeature(row)
            })
            .collect();
        let a = net.value(&rows).unwrap();
        let b = restored.value(&rows).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn corrupted_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, b"{ not json").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Parse(_))
        ));
    }

    #[test]
    fn shape_mismatch_names_the_difference() {
        let net = small_net();
        let mut ckpt = Checkpoint::from_net(&net, PolicyMode::Sarl, 0);
        ckpt.params.truncate(10);
        let err = ckpt.into_net().unwrap_err().to_string();
        assert!(err.contains("params holds 10"), "{err}");
    }
}
