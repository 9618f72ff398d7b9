//! Trajectory CSV with a JSON header comment line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::world::{preference_label, Action, GridWorld, Mood, StepResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub config: EnvConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u32,
    pub action: Action,
    pub reward: f32,
    pub mood: Mood,
    pub label: u8,
    pub done: bool,
}

impl TrajectoryRow {
    pub fn from_step(step: u32, action: Action, result: &StepResult) -> Self {
        Self {
            step,
            action,
            reward: result.reward,
            mood: result.next_state.human_mood,
            label: preference_label(&result.next_state).0,
            done: result.done,
        }
    }
}

pub fn write_trajectory<W: Write>(
    out: W,
    header: &TrajectoryHeader,
    rows: &[TrajectoryRow],
) -> Result<()> {
    let mut out = out;
    writeln!(out, "# {}", serde_json::to_string(header)?)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: BufRead>(mut input: R) -> Result<(TrajectoryHeader, Vec<TrajectoryRow>)> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let json = first
        .trim_end()
        .strip_prefix("# ")
        .ok_or_else(|| Error::Format("trajectory file lacks the '# {json}' header".into()))?;
    let header: TrajectoryHeader = serde_json::from_str(json)?;
    let rows = csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

/// Roll out `actions` (truncated at episode end) from `seed`.
pub fn record_rollout(
    world: &GridWorld,
    seed: u64,
    actions: &[Action],
) -> Result<Vec<TrajectoryRow>> {
    let (mut state, _) = world.reset(seed);
    let mut rows = Vec::new();
    for (i, &a) in actions.iter().enumerate() {
        if state.is_done() {
            break;
        }
        let r = world.step(&state, a)?;
        rows.push(TrajectoryRow::from_step(i as u32, a, &r));
        state = r.next_state;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trips() {
        let world = GridWorld::new(EnvConfig::default()).unwrap();
        let actions: Vec<Action> = (0..70).map(|i| Action::ALL[i % 3]).collect();
        let rows = record_rollout(&world, 4, &actions).unwrap();
        assert!(rows.last().unwrap().done);
        let header = TrajectoryHeader {
            config: world.config().clone(),
            seed: 4,
        };
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &header, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# {"));
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("step,action,reward,mood,label,done"));
        let (h, back) = read_trajectory(&buf[..]).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, rows);
    }
}
