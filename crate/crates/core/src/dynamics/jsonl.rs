//! JSON Lines event logs: one header record, then one record per event.
//!
//! Ball, axis and face labels are one-based in the log.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, PhasePoint};

use super::{CollisionEvent, EventKind, TrajectorySegment};

/// First line of a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub params: ModelParams,
    pub seed: Option<u64>,
    pub container: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsystem: Option<String>,
    pub t_start: f64,
    pub t_end: f64,
    pub initial: PhasePoint,
    pub final_state: PhasePoint,
}

/// One event line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub t: f64,
    pub kind: String,
    pub ball: Option<usize>,
    pub axis: Option<usize>,
    pub face: Option<u8>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub v1_pre: Vec<f64>,
    pub v1_post: Vec<f64>,
    pub v2_pre: Vec<f64>,
    pub v2_post: Vec<f64>,
    pub normal: Option<Vec<f64>>,
}

pub const KIND_WALL: &str = "wall";
pub const KIND_BALL: &str = "ball";
pub const KIND_ANTIPODAL: &str = "antipodal";
/// Scatterer hits of a single-particle billiard flow.
pub const KIND_SCATTERER: &str = "scatterer";

impl EventRecord {
    pub fn from_event(ev: &CollisionEvent) -> EventRecord {
        let (kind, ball, axis, face) = match ev.kind {
            EventKind::Wall { ball, axis, face } => (KIND_WALL, Some(ball + 1), Some(axis + 1), Some(face)),
            EventKind::BallBall => (KIND_BALL, None, None, None),
            EventKind::Antipodal => (KIND_ANTIPODAL, None, None, None),
            EventKind::Scatterer => (KIND_SCATTERER, None, None, None),
        };
        EventRecord {
            t: ev.time,
            kind: kind.to_string(),
            ball,
            axis,
            face,
            q1: ev.q1.as_slice().to_vec(),
            q2: ev.q2.as_slice().to_vec(),
            v1_pre: ev.v1_pre.as_slice().to_vec(),
            v1_post: ev.v1_post.as_slice().to_vec(),
            v2_pre: ev.v2_pre.as_slice().to_vec(),
            v2_post: ev.v2_post.as_slice().to_vec(),
            normal: ev.normal.as_ref().map(|n| n.as_slice().to_vec()),
        }
    }

    /// Back to an in-memory event; rejects records that do not describe one.
    pub fn to_event(&self) -> std::result::Result<CollisionEvent, String> {
        let kind = match self.kind.as_str() {
            KIND_WALL => {
                let (Some(ball), Some(axis), Some(face)) = (self.ball, self.axis, self.face) else {
                    return Err("wall record needs ball, axis and face".into());
                };
                if !(1..=2).contains(&ball) || axis == 0 || face > 1 {
                    return Err(format!("bad wall label ball={ball} axis={axis} face={face}"));
                }
                EventKind::Wall { ball: ball - 1, axis: axis - 1, face }
            }
            KIND_BALL => EventKind::BallBall,
            KIND_SCATTERER => EventKind::Scatterer,
            KIND_ANTIPODAL => EventKind::Antipodal,
            other => return Err(format!("unknown event kind {other:?}")),
        };
        let n = self.q1.len();
        let lens = [self.q2.len(), self.v1_pre.len(), self.v1_post.len(), self.v2_pre.len(), self.v2_post.len()];
        if lens.iter().any(|&l| l != n) || self.normal.as_ref().is_some_and(|v| v.len() != n) {
            return Err("vector lengths disagree".into());
        }
        if !self.t.is_finite() {
            return Err("non-finite time".into());
        }
        let v = |x: &Vec<f64>| crate::geometry::Vector::from_vec(x.clone());
        Ok(CollisionEvent {
            time: self.t,
            kind,
            q1: v(&self.q1),
            q2: v(&self.q2),
            v1_pre: v(&self.v1_pre),
            v2_pre: v(&self.v2_pre),
            v1_post: v(&self.v1_post),
            v2_post: v(&self.v2_post),
            normal: self.normal.as_ref().map(v),
        })
    }
}

/// A parsed log.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<CollisionEvent>,
}

impl EventLog {
    /// Rebuild a segment of the standard model; only valid for logs of
    /// base-model runs.
    pub fn to_segment(&self) -> Result<TrajectorySegment> {
        self.header.params.check()?;
        let system = super::PairSystem::standard(&self.header.params);
        if system.container.describe() != self.header.container {
            return Err(Error::EventLog { line: 1, message: "log is not from the standard container".into() });
        }
        Ok(TrajectorySegment {
            params: self.header.params,
            system,
            t_start: self.header.t_start,
            initial: self.header.initial.clone(),
            events: self.events.clone(),
            t_end: self.header.t_end,
            final_state: self.header.final_state.clone(),
            branch_warnings: Vec::new(),
        })
    }
}

/// Serialize a segment as JSON Lines.
pub fn write_segment(seg: &TrajectorySegment, seed: Option<u64>, subsystem: Option<&str>) -> String {
    let header = LogHeader {
        params: seg.params,
        seed,
        container: seg.system.container.describe(),
        subsystem: subsystem.map(str::to_string),
        t_start: seg.t_start,
        t_end: seg.t_end,
        initial: seg.initial.clone(),
        final_state: seg.final_state.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for ev in &seg.events {
        out.push_str(&serde_json::to_string(&EventRecord::from_event(ev)).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parse a log produced by [`write_segment`]. Blank lines are ignored;
/// event times must be non-decreasing.
pub fn parse_event_log(text: &str) -> Result<EventLog> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(Error::EventLog { line: 1, message: "empty log".into() })?;
    let header: LogHeader =
        serde_json::from_str(first).map_err(|e| Error::EventLog { line: 1, message: format!("header: {e}") })?;
    let mut events = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (i, line) in lines {
        let record: EventRecord =
            serde_json::from_str(line).map_err(|e| Error::EventLog { line: i + 1, message: e.to_string() })?;
        let ev = record.to_event().map_err(|message| Error::EventLog { line: i + 1, message })?;
        if ev.time < last {
            return Err(Error::EventLog { line: i + 1, message: "event times decrease".into() });
        }
        last = ev.time;
        events.push(ev);
    }
    Ok(EventLog { header, events })
}
