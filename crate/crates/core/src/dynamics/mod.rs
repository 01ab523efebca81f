//! Event-driven dynamics: wall reflections, ball collisions, free flight
//! and trajectory segments.

mod engine;
pub mod jsonl;

use serde::{Deserialize, Serialize};

pub use engine::{Contact, PairSystem, Surface, SurfaceRole, WallHit, ACCUMULATION_LIMIT, PRECONDITION_SLACK};

use crate::error::{Error, Result};
use crate::geometry::{AxisKind, Vector};
use crate::model::{ModelParams, PhasePoint};

/// What kind of boundary was hit. Ball and axis indices are zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Wall {
        ball: usize,
        axis: usize,
        face: u8,
    },
    BallBall,
    /// Contact with a mirrored cylinder (only in the doubled-torus pair
    /// dynamics).
    Antipodal,
    /// A point particle reaching a scatterer of a Sinai billiard; only in
    /// subsystem logs.
    Scatterer,
}

impl EventKind {
    pub fn is_ball(&self) -> bool {
        matches!(self, EventKind::BallBall)
    }
}

/// One processed event, with the states on both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub kind: EventKind,
    pub q1: Vector,
    pub q2: Vector,
    pub v1_pre: Vector,
    pub v2_pre: Vector,
    pub v1_post: Vector,
    pub v2_post: Vector,
    /// Unit normal of the contact, for ball and antipodal events.
    pub normal: Option<Vector>,
}

impl CollisionEvent {
    pub fn new(
        time: f64,
        kind: EventKind,
        pre: &PhasePoint,
        post: &PhasePoint,
        normal: Option<Vector>,
    ) -> CollisionEvent {
        CollisionEvent {
            time,
            kind,
            q1: post.q1.clone(),
            q2: post.q2.clone(),
            v1_pre: pre.v1.clone(),
            v2_pre: pre.v2.clone(),
            v1_post: post.v1.clone(),
            v2_post: post.v2.clone(),
            normal,
        }
    }

    pub fn pre_state(&self) -> PhasePoint {
        PhasePoint { q1: self.q1.clone(), q2: self.q2.clone(), v1: self.v1_pre.clone(), v2: self.v2_pre.clone() }
    }

    pub fn post_state(&self) -> PhasePoint {
        PhasePoint { q1: self.q1.clone(), q2: self.q2.clone(), v1: self.v1_post.clone(), v2: self.v2_post.clone() }
    }
}

/// Events that were resolved in lexicographic order because they fell
/// within the event tolerance of each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchWarning {
    pub time: f64,
    pub gap: f64,
    pub kinds: Vec<EventKind>,
}

/// When to end a simulation; the first limit reached wins.
///
/// Count-based stops end the segment halfway to the next event (at most
/// half a time unit later), so segment endpoints never coincide with
/// collisions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StopCondition {
    pub max_events: Option<usize>,
    pub max_ball_collisions: Option<usize>,
    /// Duration measured from the start time.
    pub t_max: Option<f64>,
}

impl StopCondition {
    pub fn events(n: usize) -> StopCondition {
        StopCondition { max_events: Some(n), ..Default::default() }
    }

    pub fn ball_collisions(n: usize) -> StopCondition {
        StopCondition { max_ball_collisions: Some(n), ..Default::default() }
    }

    pub fn duration(t: f64) -> StopCondition {
        StopCondition { t_max: Some(t), ..Default::default() }
    }

    pub fn check(&self) -> Result<()> {
        if self.max_events.is_none() && self.max_ball_collisions.is_none() && self.t_max.is_none() {
            return Err(Error::InvalidParams("stop condition sets no limit".into()));
        }
        if let Some(t) = self.t_max {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidParams(format!("duration {t} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// A simulated stretch of trajectory on `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub params: ModelParams,
    pub system: PairSystem,
    pub t_start: f64,
    pub initial: PhasePoint,
    pub events: Vec<CollisionEvent>,
    pub t_end: f64,
    pub final_state: PhasePoint,
    pub branch_warnings: Vec<BranchWarning>,
}

impl TrajectorySegment {
    /// Indices into `events` of the ball-ball collisions.
    pub fn ball_event_indices(&self) -> Vec<usize> {
        (0..self.events.len()).filter(|&i| self.events[i].kind.is_ball()).collect()
    }

    pub fn ball_collision_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind.is_ball()).count()
    }

    fn surface_for(&self, kind: EventKind) -> Result<Surface> {
        let mirrored = !matches!(kind, EventKind::BallBall);
        self.system
            .surfaces
            .iter()
            .copied()
            .find(|s| s.role == SurfaceRole::Collide && s.mirror.is_empty() != mirrored)
            .ok_or_else(|| Error::InvalidState(format!("no collision surface for {kind:?}")))
    }

    /// Re-apply the logged events to the initial state.
    pub fn replay(&self) -> Result<PhasePoint> {
        let mut x = self.initial.clone();
        let mut t = self.t_start;
        for ev in &self.events {
            x = self.system.advance(&x, ev.time - t);
            t = ev.time;
            x = match ev.kind {
                EventKind::Wall { ball, axis, .. } => self.system.reflect_wall(&x, ball, axis)?,
                kind => self.system.reflect_contact(&x, self.surface_for(kind)?)?.0,
            };
        }
        Ok(self.system.advance(&x, self.t_end - t))
    }

    /// Index of the last event at or before `t`, if any.
    pub fn last_event_before(&self, t: f64) -> Option<usize> {
        let n = self.events.partition_point(|e| e.time <= t);
        n.checked_sub(1)
    }

    /// State at absolute time `t` in `[t_start, t_end]`; at an event time
    /// the post-event state is returned.
    pub fn state_at(&self, t: f64) -> Result<PhasePoint> {
        if !(t >= self.t_start && t <= self.t_end) {
            return Err(Error::InvalidParams(format!("time {t} outside segment [{}, {}]", self.t_start, self.t_end)));
        }
        Ok(match self.last_event_before(t) {
            Some(i) => self.system.advance(&self.events[i].post_state(), t - self.events[i].time),
            None => self.system.advance(&self.initial, t - self.t_start),
        })
    }

    /// The sub-segment on `[t_a, t_b]`.
    pub fn slice(&self, t_a: f64, t_b: f64) -> Result<TrajectorySegment> {
        if t_b < t_a {
            return Err(Error::InvalidParams(format!("empty slice [{t_a}, {t_b}]")));
        }
        let initial = self.state_at(t_a)?;
        let final_state = self.state_at(t_b)?;
        let events = self.events.iter().filter(|e| e.time > t_a && e.time <= t_b).cloned().collect();
        let branch_warnings = self.branch_warnings.iter().filter(|w| w.time >= t_a && w.time <= t_b).cloned().collect();
        Ok(TrajectorySegment {
            params: self.params,
            system: self.system.clone(),
            t_start: t_a,
            initial,
            events,
            t_end: t_b,
            final_state,
            branch_warnings,
        })
    }

    /// Whether the segment lives in the standard container of its model.
    pub fn is_standard(&self) -> bool {
        self.system == PairSystem::standard(&self.params)
    }

    /// Largest periodic circumference, 1 for the base model.
    pub fn max_period(&self) -> f64 {
        self.system
            .container
            .axes
            .iter()
            .map(|a| match a {
                AxisKind::Wall => 1.0,
                AxisKind::Periodic(l) => *l,
            })
            .fold(1.0, f64::max)
    }
}

/// Earliest wall hit from `x`: `(time, ball, axis, face)` with zero-based
/// indices, or `None` when nothing moves along a walled axis.
pub fn next_wall_event(x: &PhasePoint, params: &ModelParams) -> Option<WallHit> {
    PairSystem::standard(params).wall_candidates(x).into_iter().next()
}

/// Earliest ball-ball contact time within `horizon`.
pub fn next_ball_event(x: &PhasePoint, horizon: f64, params: &ModelParams) -> Result<Option<f64>> {
    let system = PairSystem::standard(params);
    let contact = system.next_contact(x, Surface::GENUINE, horizon)?;
    match contact {
        Some(c) if c.normal_speed.abs() < params.tol.graze => {
            Err(Error::GrazingImpact { time: c.time, normal_speed: c.normal_speed })
        }
        Some(c) => Ok(Some(c.time)),
        None => Ok(None),
    }
}

/// Specular reflection of ball `ball` at a wall of axis `axis` (both
/// zero-based).
pub fn apply_wall_reflection(x: &PhasePoint, ball: usize, axis: usize, params: &ModelParams) -> Result<PhasePoint> {
    if ball > 1 || axis >= params.k {
        return Err(Error::InvalidParams(format!("no wall for ball {} axis {}", ball + 1, axis + 1)));
    }
    PairSystem::standard(params).reflect_wall(x, ball, axis)
}

/// Elastic equal-mass collision; returns the new point and the unit normal
/// `n = (q1 - q2)/|q1 - q2|` (minimal image).
pub fn apply_ball_collision(x: &PhasePoint, params: &ModelParams) -> Result<(PhasePoint, Vector)> {
    PairSystem::standard(params).reflect_contact(x, Surface::GENUINE)
}

/// Uniform motion for time `t`; fails if an event was skipped on the way.
pub fn advance_flow(x: &PhasePoint, t: f64, params: &ModelParams) -> Result<PhasePoint> {
    let system = PairSystem::standard(params);
    let slack = params.tol.event * (1.0 + x.v1.norm() + x.v2.norm());
    if let Some(w) = system.wall_candidates(x).first() {
        if w.time < t - slack {
            return Err(Error::EventSkipped(t));
        }
    }
    if let Some(c) = system.next_contact(x, Surface::GENUINE, t)? {
        if c.time < t - slack {
            return Err(Error::EventSkipped(t));
        }
    }
    Ok(system.advance(x, t))
}

/// Simulate the base model from `x0` (taken at time 0).
pub fn simulate(x0: &PhasePoint, stop: &StopCondition, params: &ModelParams) -> Result<TrajectorySegment> {
    params.check()?;
    let system = PairSystem::standard(params);
    system.check_start(params, x0)?;
    system.simulate(params, x0, 0.0, stop)
}
