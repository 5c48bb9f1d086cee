//! Episode traces and their line-delimited JSON persistence.
//!
//! File layout: one header line, then one line per simulated state.

use super::{CarState, ControlAction, EventKind, ScenarioFamily};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec2};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Goal,
    Crash,
    NearMissGoal,
    Timeout,
}

impl Outcome {
    pub fn reached_goal(self) -> bool {
        matches!(self, Outcome::Goal | Outcome::NearMissGoal)
    }
}

/// Snapshot of one simulated state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceState {
    pub time: f64,
    pub car: CarState,
    pub pedestrians: Vec<Vec2>,
    pub other_cars: Vec<Pose>,
    pub events: Vec<EventKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub scenario_id: String,
    pub family: ScenarioFamily,
    pub states: Vec<TraceState>,
    /// `actions[k]` takes `states[k]` to `states[k + 1]`.
    pub actions: Vec<ControlAction>,
    /// Mean per-pose risk of the trajectory planned at each decision.
    pub planned_risk: Vec<f64>,
    /// Policy wall-clock time per step (ms); zero when timing is off.
    pub decision_ms: Vec<f64>,
    /// Whether the policy made a fresh decision at each step.
    pub decided: Vec<bool>,
    pub events: Vec<(f64, EventKind)>,
    pub outcome: Outcome,
    pub ttg: Option<f64>,
}

impl EpisodeTrace {
    pub fn had_near_miss(&self) -> bool {
        self.events.iter().any(|(_, e)| *e == EventKind::NearMiss)
    }

    /// Applied accelerations, one per state after the first.
    pub fn accelerations(&self) -> Vec<f64> {
        self.states.iter().skip(1).map(|s| s.car.acceleration).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    scenario_id: String,
    family: ScenarioFamily,
    outcome: Outcome,
    ttg: Option<f64>,
    states: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    #[serde(flatten)]
    state: TraceState,
    action: Option<ControlAction>,
    planned_risk: Option<f64>,
    decision_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decided: Option<bool>,
}

pub fn write_trace<W: Write>(trace: &EpisodeTrace, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let header = Header {
        scenario_id: trace.scenario_id.clone(),
        family: trace.family,
        outcome: trace.outcome,
        ttg: trace.ttg,
        states: trace.states.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (k, state) in trace.states.iter().enumerate() {
        let line = Line {
            state: state.clone(),
            action: trace.actions.get(k).copied(),
            planned_risk: trace.planned_risk.get(k).copied(),
            decision_ms: trace.decision_ms.get(k).copied(),
            decided: trace.decided.get(k).copied(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<EpisodeTrace> {
    let mut lines = BufReader::new(input).lines();
    let header: Header = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => return Err(Error::Trace("empty trace file".into())),
    };
    let mut trace = EpisodeTrace {
        scenario_id: header.scenario_id,
        family: header.family,
        states: Vec::with_capacity(header.states),
        actions: vec![],
        planned_risk: vec![],
        decision_ms: vec![],
        decided: vec![],
        events: vec![],
        outcome: header.outcome,
        ttg: header.ttg,
    };
    for l in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(&l)?;
        for e in &line.state.events {
            trace.events.push((line.state.time, *e));
        }
        trace.states.push(line.state);
        trace.actions.extend(line.action);
        trace.planned_risk.extend(line.planned_risk);
        trace.decision_ms.extend(line.decision_ms);
        if line.action.is_some() {
            trace.decided.push(line.decided.unwrap_or(true));
        }
    }
    if trace.states.len() != header.states {
        return Err(Error::Trace(format!(
            "{}: header announces {} states, found {}",
            trace.scenario_id,
            header.states,
            trace.states.len()
        )));
    }
    Ok(trace)
}
