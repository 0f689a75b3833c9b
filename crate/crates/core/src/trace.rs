//! Line-delimited trajectory export: one JSON record per simulation step.

use crate::env::Terminal;
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedSample {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Episode identifier (the episode seed).
    pub episode: u64,
    /// Simulation time at the end of the step, in seconds.
    pub t: f64,
    pub robot_position: Vec2,
    pub robot_velocity: Vec2,
    pub robot_goal: Vec2,
    pub beep: bool,
    pub pedestrians: Vec<PedSample>,
    pub reward: f64,
    pub reward_env: f64,
    pub reward_social: f64,
    pub terminal: Terminal,
}

pub type Trajectory = Vec<TraceRecord>;

pub fn write_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Trajectory> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
