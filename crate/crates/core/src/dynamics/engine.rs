//! Exact event-driven integration of two hard balls in a product container.
//!
//! The engine works with any [`PairSystem`]: the standard model, the
//! single-axis lifted container used for unfolding, and the doubled torus
//! of the orthogonal cylindric billiard. Collision surfaces are
//! "cylinders" `|q1 - R_S q2| = 2r` for a mirror set `S` of periodic axes;
//! `S = {}` is the ordinary ball-ball contact.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reflect, AxisKind, AxisSet, Container, Vector};
use crate::model::{validate_with, ModelParams, PhasePoint, ToleranceSet};

use super::{BranchWarning, CollisionEvent, EventKind, StopCondition, TrajectorySegment};

/// What happens when the configuration reaches a surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceRole {
    /// Elastic reflection.
    Collide,
    /// The surface must never be reached; contact is a hard failure.
    Forbid,
}

/// A contact surface `|q1 - R_mirror q2| = 2r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub mirror: AxisSet,
    pub role: SurfaceRole,
}

impl Surface {
    pub const GENUINE: Surface = Surface { mirror: AxisSet::EMPTY, role: SurfaceRole::Collide };
}

/// Container plus contact surfaces: everything the event loop needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSystem {
    pub container: Container,
    pub radius: f64,
    pub surfaces: Vec<Surface>,
    pub tol: ToleranceSet,
}

/// More events than this inside one time unit aborts a run.
pub const ACCUMULATION_LIMIT: usize = 10_000;

/// Relative-motion travel (in units of the smallest circumference) covered
/// by one free-flight chunk when no wall bounds the flight.
const CHUNK_TRAVEL: f64 = 2.0;

impl PairSystem {
    pub fn standard(params: &ModelParams) -> PairSystem {
        PairSystem {
            container: params.container(),
            radius: params.r,
            surfaces: vec![Surface::GENUINE],
            tol: params.tol,
        }
    }

    fn contact_distance(&self) -> f64 {
        2.0 * self.radius
    }

    /// Uniform motion for time `t`, periodic coordinates wrapped.
    pub fn advance(&self, x: &PhasePoint, t: f64) -> PhasePoint {
        let mut q1 = &x.q1 + &x.v1 * t;
        let mut q2 = &x.q2 + &x.v2 * t;
        self.container.wrap(&mut q1);
        self.container.wrap(&mut q2);
        PhasePoint { q1, q2, v1: x.v1.clone(), v2: x.v2.clone() }
    }

    /// All wall hits of either ball, earliest first.
    pub fn wall_candidates(&self, x: &PhasePoint) -> Vec<WallHit> {
        let mut out = Vec::new();
        for ball in 0..2 {
            let (q, v) = (x.position(ball), x.velocity(ball));
            for (axis, kind) in self.container.axes.iter().enumerate() {
                if *kind != AxisKind::Wall || v[axis] == 0.0 {
                    continue;
                }
                let (time, face) =
                    if v[axis] > 0.0 { ((1.0 - q[axis]) / v[axis], 1u8) } else { (-q[axis] / v[axis], 0u8) };
                out.push(WallHit { time: time.max(0.0), ball, axis, face });
            }
        }
        out.sort_by(|a, b| a.time.total_cmp(&b.time).then((a.ball, a.axis, a.face).cmp(&(b.ball, b.axis, b.face))));
        out
    }

    fn relative(&self, x: &PhasePoint, mirror: AxisSet) -> (Vector, Vector) {
        let d = self.container.mirrored_difference(&x.q1, &x.q2, mirror);
        let u = &x.v1 - reflect(&x.v2, mirror);
        (d, u)
    }

    /// Length of a free-flight chunk short enough for image enumeration to
    /// stay small.
    fn chunk(&self, x: &PhasePoint) -> f64 {
        let mut chunk = f64::INFINITY;
        for s in &self.surfaces {
            let u = &x.v1 - reflect(&x.v2, s.mirror);
            for (j, kind) in self.container.axes.iter().enumerate() {
                if let AxisKind::Periodic(l) = *kind {
                    if u[j] != 0.0 {
                        chunk = chunk.min(CHUNK_TRAVEL * l / u[j].abs());
                    }
                }
            }
        }
        chunk
    }

    /// Earliest contact with `surface` in `[0, horizon]`.
    ///
    /// Lattice images are enumerated per periodic axis over the range the
    /// relative coordinate sweeps during the flight, widened by the contact
    /// distance. The quadratic root is refined by one Newton step.
    pub fn next_contact(&self, x: &PhasePoint, surface: Surface, horizon: f64) -> Result<Option<Contact>> {
        let rho = self.contact_distance();
        let (d, u) = self.relative(x, surface.mirror);
        let a = u.norm_squared();
        if a == 0.0 {
            return Ok(None);
        }
        let nu = d.len();
        let mut ranges: Vec<(i64, i64, f64)> = Vec::with_capacity(nu);
        for j in 0..nu {
            match self.container.axes[j] {
                AxisKind::Wall => ranges.push((0, 0, 0.0)),
                AxisKind::Periodic(l) => {
                    let h = if horizon.is_finite() { horizon } else { 0.0 };
                    let end = d[j] + h * u[j];
                    let (lo, hi) = if end < d[j] { (end, d[j]) } else { (d[j], end) };
                    let m_lo = ((lo - rho) / l).ceil() as i64;
                    let m_hi = ((hi + rho) / l).floor() as i64;
                    ranges.push((m_lo, m_hi, l));
                }
            }
        }
        if ranges.iter().any(|&(lo, hi, _)| lo > hi) {
            return Ok(None);
        }
        let mut best: Option<(f64, Vector)> = None;
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        loop {
            let shifted = Vector::from_fn(nu, |j, _| d[j] - idx[j] as f64 * ranges[j].2);
            if let Some(t) = earliest_root(&shifted, &u, a, rho) {
                if t <= horizon && best.as_ref().is_none_or(|(bt, _)| t < *bt) {
                    best = Some((t, shifted));
                }
            }
            // odometer increment over the image box
            let mut j = 0;
            loop {
                if j == nu {
                    return Ok(best.map(|(t, shifted)| Contact {
                        time: t,
                        normal_speed: (&shifted + &u * t).dot(&u) / rho,
                        surface,
                    }));
                }
                if idx[j] < ranges[j].1 {
                    idx[j] += 1;
                    break;
                }
                idx[j] = ranges[j].0;
                j += 1;
            }
        }
    }

    /// Specular reflection at the wall `axis` for ball `ball`.
    pub fn reflect_wall(&self, x: &PhasePoint, ball: usize, axis: usize) -> Result<PhasePoint> {
        let q = x.position(ball)[axis];
        let speed = x.velocity(ball).norm().max(1.0);
        let tol = 10.0 * self.tol.event * speed;
        let face = if q.abs() <= tol {
            0.0
        } else if (q - 1.0).abs() <= tol {
            1.0
        } else {
            return Err(Error::NotOnWall { ball: ball + 1, axis: axis + 1, coordinate: q });
        };
        let mut y = x.clone();
        y.position_mut(ball)[axis] = face;
        let v = y.velocity_mut(ball);
        v[axis] = -v[axis];
        Ok(y)
    }

    /// Elastic reflection at `surface`; returns the new point and the unit
    /// normal `n` of `q1 - R_S q2`.
    pub fn reflect_contact(&self, x: &PhasePoint, surface: Surface) -> Result<(PhasePoint, Vector)> {
        let rho = self.contact_distance();
        let (d, u) = self.relative(x, surface.mirror);
        let dist = d.norm();
        if (dist - rho).abs() > 1e-9 * rho.max(1.0) {
            return Err(Error::NotInContact { distance: dist, expected: rho });
        }
        let n = d / dist;
        let c = u.dot(&n);
        if c > self.tol.graze {
            return Err(Error::Receding { normal_speed: c });
        }
        let mut y = x.clone();
        y.v1 = &x.v1 - &n * c;
        y.v2 = &x.v2 + reflect(&n, surface.mirror) * c;
        Ok((y, n))
    }

    /// Earliest event of any kind within `horizon`, used to place segment
    /// end points strictly between events.
    fn time_to_next_event(&self, x: &PhasePoint, horizon: f64) -> f64 {
        let mut best = horizon;
        if let Some(w) = self.wall_candidates(x).first() {
            best = best.min(w.time);
        }
        for s in &self.surfaces {
            if let Ok(Some(c)) = self.next_contact(x, *s, best) {
                best = best.min(c.time);
            }
        }
        best
    }

    /// Event loop from `x0` at absolute time `t0` until `stop`.
    pub fn simulate(
        &self,
        params: &ModelParams,
        x0: &PhasePoint,
        t0: f64,
        stop: &StopCondition,
    ) -> Result<TrajectorySegment> {
        stop.check()?;
        let mut start = x0.clone();
        self.container.wrap(&mut start.q1);
        self.container.wrap(&mut start.q2);
        // free flight is always measured from the last event so that replay
        // reproduces every state bit for bit
        let mut anchor = start.clone();
        let mut t_anchor = t0;
        let mut x = start.clone();
        let mut t = t0;
        let t_stop = stop.t_max.map_or(f64::INFINITY, |dt| t0 + dt);
        let mut events: Vec<CollisionEvent> = Vec::new();
        let mut warnings = Vec::new();
        let mut ball_count = 0usize;
        let mut window: VecDeque<f64> = VecDeque::new();

        loop {
            let count_reached = stop.max_events.is_some_and(|n| events.len() >= n)
                || stop.max_ball_collisions.is_some_and(|n| ball_count >= n);
            if count_reached {
                let dt = 0.5 * self.time_to_next_event(&x, 1.0);
                let t_end = (t + dt).min(t_stop);
                x = self.advance(&anchor, t_end - t_anchor);
                t = t_end;
                break;
            }
            let t_left = t_stop - t;
            let walls = self.wall_candidates(&x);
            let t_wall = walls.first().map_or(f64::INFINITY, |w| w.time);
            let chunk = self.chunk(&x);
            let horizon = t_wall.min(t_left).min(chunk);
            if !horizon.is_finite() {
                return Err(Error::InvalidState("no event and no stopping time: the run would never end".into()));
            }

            let mut candidates: Vec<Candidate> = Vec::new();
            let mut forbidden = f64::INFINITY;
            for (i, s) in self.surfaces.iter().enumerate() {
                if let Some(c) = self.next_contact(&x, *s, horizon + self.tol.event)? {
                    if s.role == SurfaceRole::Forbid {
                        forbidden = forbidden.min(c.time);
                        continue;
                    }
                    if c.normal_speed.abs() < self.tol.graze {
                        return Err(Error::GrazingImpact { time: t + c.time, normal_speed: c.normal_speed });
                    }
                    candidates.push(Candidate {
                        time: c.time,
                        order: (1 + i, 0, 0, 0),
                        kind: CandidateKind::Surface(i),
                    });
                }
            }
            let t_first_contact = candidates.iter().map(|c| c.time).fold(f64::INFINITY, f64::min);
            let t_min = t_wall.min(t_first_contact);
            if forbidden.is_finite() && forbidden <= t_min.min(t_left) {
                let at = self.advance(&anchor, t + forbidden - t_anchor);
                let s = self.surfaces.iter().find(|s| s.role == SurfaceRole::Forbid).expect("forbidden surface");
                let distance = self.container.mirrored_difference(&at.q1, &at.q2, s.mirror).norm();
                return Err(Error::AntipodalBreach { time: t + forbidden, distance });
            }
            if t_min > horizon && horizon >= t_left {
                x = self.advance(&anchor, t_stop - t_anchor);
                t = t_stop;
                break;
            }
            if t_min > horizon {
                // chunk boundary without an event
                let t_new = t + horizon;
                x = self.advance(&anchor, t_new - t_anchor);
                t = t_new;
                continue;
            }
            for w in walls.iter().take_while(|w| w.time <= t_min + self.tol.event) {
                candidates.push(Candidate {
                    time: w.time,
                    order: (0, w.ball, w.axis, w.face as usize),
                    kind: CandidateKind::Wall(*w),
                });
            }
            candidates.retain(|c| c.time <= t_min + self.tol.event);
            candidates.sort_by_key(|c| c.order);
            if candidates.len() > 1 {
                let mut times: Vec<f64> = candidates.iter().map(|c| c.time).collect();
                times.sort_by(f64::total_cmp);
                let gap = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                if gap < self.tol.event / 10.0 {
                    return Err(Error::BranchAmbiguity { time: t + t_min, gap });
                }
                warnings.push(BranchWarning {
                    time: t + t_min,
                    gap,
                    kinds: candidates.iter().map(|c| c.event_kind(&self.surfaces)).collect(),
                });
            }

            let t_new = t + t_min;
            x = self.advance(&anchor, t_new - t_anchor);
            t = t_new;
            for cand in &candidates {
                let pre = x.clone();
                let (post, normal, kind) = match cand.kind {
                    CandidateKind::Wall(w) => {
                        let y = self.reflect_wall(&x, w.ball, w.axis)?;
                        (y, None, EventKind::Wall { ball: w.ball, axis: w.axis, face: w.face })
                    }
                    CandidateKind::Surface(i) => {
                        let s = self.surfaces[i];
                        match self.reflect_contact(&x, s) {
                            Ok((y, n)) => {
                                let kind = if s.mirror.is_empty() { EventKind::BallBall } else { EventKind::Antipodal };
                                (y, Some(n), kind)
                            }
                            // an earlier member of a tie group already turned the pair around
                            Err(Error::Receding { .. }) if candidates.len() > 1 => continue,
                            Err(e) => return Err(e),
                        }
                    }
                };
                ball_count += usize::from(kind == EventKind::BallBall);
                events.push(CollisionEvent::new(t, kind, &pre, &post, normal));
                x = post;
                window.push_back(t);
                while window.front().is_some_and(|&s| s < t - 1.0) {
                    window.pop_front();
                }
                if window.len() > ACCUMULATION_LIMIT {
                    return Err(Error::AccumulationSuspected { time: t, limit: ACCUMULATION_LIMIT });
                }
            }
            anchor = x.clone();
            t_anchor = t;
        }

        Ok(TrajectorySegment {
            params: *params,
            system: self.clone(),
            t_start: t0,
            initial: start,
            events,
            t_end: t,
            final_state: x,
            branch_warnings: warnings,
        })
    }

    /// Lenient precondition check used before simulating the standard model.
    pub fn check_start(&self, params: &ModelParams, x: &PhasePoint) -> Result<()> {
        let violations = validate_with(params, x, PRECONDITION_SLACK);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidState(format!("{violations:?}")))
        }
    }
}

/// Drift tolerated in a starting point (finite-difference perturbations
/// move off the energy shell at second order).
pub const PRECONDITION_SLACK: f64 = 1e-6;

/// Smallest non-negative root of `|d + t u|^2 = rho^2` on an approaching
/// branch.
fn earliest_root(d: &Vector, u: &Vector, a: f64, rho: f64) -> Option<f64> {
    let b = d.dot(u);
    if b >= 0.0 {
        return None;
    }
    let c = d.norm_squared() - rho * rho;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let mut t = c / (-b + disc.sqrt());
    // one Newton step on f(t) = |d + t u|^2 - rho^2
    let at = d + u * t;
    let fp = 2.0 * at.dot(u);
    if fp < 0.0 {
        let f = at.norm_squared() - rho * rho;
        let refined = t - f / fp;
        if refined.is_finite() && (refined - t).abs() <= 1e-6 * (1.0 + t.abs()) {
            t = refined;
        }
    }
    if t < -1e-12 {
        return None;
    }
    Some(t.max(0.0))
}

/// A predicted wall impact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallHit {
    pub time: f64,
    /// Zero-based ball index.
    pub ball: usize,
    /// Zero-based axis index.
    pub axis: usize,
    pub face: u8,
}

/// A predicted contact with a collision surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub time: f64,
    /// `<u, n>` at impact, negative when approaching.
    pub normal_speed: f64,
    pub surface: Surface,
}

#[derive(Clone, Copy, Debug)]
enum CandidateKind {
    Wall(WallHit),
    Surface(usize),
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    time: f64,
    order: (usize, usize, usize, usize),
    kind: CandidateKind,
}

impl Candidate {
    fn event_kind(&self, surfaces: &[Surface]) -> EventKind {
        match self.kind {
            CandidateKind::Wall(w) => EventKind::Wall { ball: w.ball, axis: w.axis, face: w.face },
            CandidateKind::Surface(i) => {
                if surfaces[i].mirror.is_empty() {
                    EventKind::BallBall
                } else {
                    EventKind::Antipodal
                }
            }
        }
    }
}
