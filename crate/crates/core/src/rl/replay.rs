//! Experience replay.

use crate::env::{Action, JointState};
use rand::Rng;
use std::collections::VecDeque;

/// One step of experience. Terminal transitions carry no bootstrap.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: JointState,
    pub action: Action,
    pub reward: f64,
    pub next_state: JointState,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with FIFO eviction and seeded sampling
/// without replacement within a batch.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Samples `min(batch, len)` distinct transitions (partial Fisher-Yates).
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let k = batch.min(self.items.len());
        let mut indices: Vec<usize> = (0..self.items.len()).collect();
        for i in 0..k {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        indices[..k].iter().map(|&i| &self.items[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{JointState, RobotState};
    use crate::vec2::Vec2;

    fn transition(tag: f64) -> Transition {
        let robot = RobotState {
            position: Vec2::new(tag, 0.0),
            velocity: Vec2::default(),
            goal: Vec2::default(),
            pref_speed: 1.0,
            radius: 0.3,
            beep_range: 1.0,
            heading: Vec2::new(1.0, 0.0),
        };
        let state = JointState {
            robot,
            pedestrians: vec![],
            time: 0.0,
        };
        Transition {
            state: state.clone(),
            action: Action::STILL,
            reward: tag,
            next_state: state,
            terminal: false,
        }
    }

    #[test]
    fn eviction_is_fifo() {
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            buf.push(transition(k as f64));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.items.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_returns_only_inserted_items_without_replacement() {
        let mut buf = ReplayBuffer::new(64);
        for k in 0..20 {
            buf.push(transition(k as f64));
        }
        let mut rng = crate::seed::stream_rng(1, "replay-test", 0);
        for _ in 0..50 {
            let batch = buf.sample(8, &mut rng);
            assert_eq!(batch.len(), 8);
            let mut tags: Vec<f64> = batch.iter().map(|t| t.reward).collect();
            tags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            tags.dedup();
            assert_eq!(tags.len(), 8, "batch repeated a transition");
            assert!(tags.iter().all(|t| *t >= 0.0 && *t < 20.0));
        }
    }

    #[test]
    fn short_buffer_yields_short_batches() {
        let mut buf = ReplayBuffer::new(8);
        buf.push(transition(1.0));
        let mut rng = crate::seed::stream_rng(1, "replay-test", 1);
        assert_eq!(buf.sample(100, &mut rng).len(), 1);
        assert_eq!(ReplayBuffer::new(8).sample(4, &mut rng).len(), 0);
    }
}
