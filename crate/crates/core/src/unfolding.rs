//! Unfolding walled axes into circles of circumference 2.
//!
//! On an unfolded axis a wall bounce becomes a straight crossing of the
//! point 1, and the rooftop map `phi(x) = dist(x, 2Z)` folds the motion
//! back into `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{EventKind, PairSystem, StopCondition, Surface, SurfaceRole, TrajectorySegment};
use crate::error::{Error, Result};
use crate::geometry::{circle_distance, wrap_into, AxisKind, AxisSet, Container, Vector};
use crate::model::{ModelParams, PhasePoint};
use crate::symbolic::symbolic_sequence;

/// Distance to the nearest even integer.
pub fn rooftop(x: f64) -> f64 {
    let y = x.rem_euclid(2.0);
    y.min(2.0 - y)
}

/// Positions with some axes unfolded to `R/2Z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfoldedPoint {
    pub qhat1: Vector,
    pub qhat2: Vector,
    pub axis_mask: AxisSet,
}

/// Rooftop on the unfolded axes, identity elsewhere.
pub fn fold(u: &UnfoldedPoint) -> (Vector, Vector) {
    let f = |q: &Vector| Vector::from_fn(q.len(), |j, _| if u.axis_mask.contains(j) { rooftop(q[j]) } else { q[j] });
    (f(&u.qhat1), f(&u.qhat2))
}

/// Largest coordinate difference between two configurations of the
/// standard container (periodic axes compared on the circle).
pub fn configuration_error(a: (&Vector, &Vector), b: (&Vector, &Vector), params: &ModelParams) -> f64 {
    let mut worst = 0.0f64;
    for (p, q) in [(a.0, b.0), (a.1, b.1)] {
        for j in 0..params.nu {
            let d = if j < params.k { (p[j] - q[j]).abs() } else { circle_distance(p[j], q[j], 1.0) };
            worst = worst.max(d);
        }
    }
    worst
}

/// Container with every box axis in `mask` replaced by a circle of
/// circumference 2.
pub fn lifted_container(params: &ModelParams, mask: AxisSet) -> Container {
    let mut c = params.container();
    for j in mask.iter() {
        c.axes[j] = AxisKind::Periodic(2.0);
    }
    c
}

/// Straight-line lift of a stretch without ball collisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearUnfolding {
    pub start: UnfoldedPoint,
    pub v1: Vector,
    pub v2: Vector,
    pub duration: f64,
    /// Largest fold error over the sampled times.
    pub max_fold_error: f64,
    pub samples: usize,
}

impl LinearUnfolding {
    /// Lifted positions at time `t` after the start.
    pub fn at(&self, t: f64) -> UnfoldedPoint {
        let mask = self.start.axis_mask;
        let step = |q: &Vector, v: &Vector| {
            Vector::from_fn(q.len(), |j, _| {
                let l = if mask.contains(j) { 2.0 } else { 1.0 };
                wrap_into(q[j] + t * v[j], l)
            })
        };
        UnfoldedPoint {
            qhat1: step(&self.start.qhat1, &self.v1),
            qhat2: step(&self.start.qhat2, &self.v2),
            axis_mask: mask,
        }
    }
}

/// Lift the orbit of `x0` on `[0, duration]` to straight motion with every
/// box axis unfolded, checking the fold identity at `samples + 1` evenly
/// spaced times and at every event.
pub fn unfold_linear(x0: &PhasePoint, duration: f64, samples: usize, params: &ModelParams) -> Result<LinearUnfolding> {
    let seg = crate::dynamics::simulate(x0, &StopCondition::duration(duration), params)?;
    if let Some(ev) = seg.events.iter().find(|e| e.kind.is_ball()) {
        return Err(Error::BallCollisionEncountered(ev.time));
    }
    let mut lift = LinearUnfolding {
        start: UnfoldedPoint {
            qhat1: seg.initial.q1.clone(),
            qhat2: seg.initial.q2.clone(),
            axis_mask: params.box_axes(),
        },
        v1: seg.initial.v1.clone(),
        v2: seg.initial.v2.clone(),
        duration,
        max_fold_error: 0.0,
        samples,
    };
    let mut times: Vec<f64> =
        (0..=samples).map(|i| (seg.t_end * i as f64 / samples.max(1) as f64).min(seg.t_end)).collect();
    times.extend(seg.events.iter().map(|e| e.time));
    let mut worst = 0.0f64;
    for t in times {
        let base = seg.state_at(t)?;
        let (f1, f2) = fold(&lift.at(t));
        worst = worst.max(configuration_error((&f1, &f2), (&base.q1, &base.q2), params));
    }
    lift.max_fold_error = worst;
    Ok(lift)
}

/// A segment re-simulated with one box axis unfolded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisUnfolding {
    pub axis: usize,
    pub lifted: TrajectorySegment,
    /// Wall events of the unfolded axis in the base segment, now crossings.
    pub crossings: usize,
    /// Largest fold error at lifted event times and the end point.
    pub max_fold_error: f64,
    /// Largest event-time difference between base and lifted streams.
    pub max_time_error: f64,
    /// Smallest `|q1 - R_j q2|` over lifted event times and end points.
    pub min_antipodal_distance: f64,
}

impl AxisUnfolding {
    pub fn fold_ok(&self, params: &ModelParams) -> bool {
        self.max_fold_error <= params.tol.fold && self.max_time_error <= params.tol.fold
    }
}

/// Unfold box axis `axis` (zero-based) of `seg`.
///
/// Requires `axis` to lie outside `Z_0` and every `Z_i`. The lift is a
/// genuine simulation in the container with that axis doubled, with the
/// antipodal cylinder `|q1 - R_axis q2| = 2r` registered as a forbidden
/// surface.
pub fn unfold_axis(seg: &TrajectorySegment, axis: usize) -> Result<AxisUnfolding> {
    let params = seg.params;
    if axis >= params.k {
        return Err(Error::InvalidParams(format!("axis {} is not a box axis", axis + 1)));
    }
    if !seg.is_standard() {
        return Err(Error::InvalidState("unfolding starts from a base-model segment".into()));
    }
    match symbolic_sequence(seg) {
        Ok(sigma) => {
            if sigma.union_with_leading().contains(axis) {
                return Err(Error::AxisInZ(axis + 1));
            }
        }
        Err(Error::NoBallCollision) => {}
        Err(e) => return Err(e),
    }
    let mirror = AxisSet::single(axis);
    let system = PairSystem {
        container: lifted_container(&params, mirror),
        radius: params.r,
        surfaces: vec![Surface::GENUINE, Surface { mirror, role: SurfaceRole::Forbid }],
        tol: params.tol,
    };
    let lifted =
        system.simulate(&params, &seg.initial, seg.t_start, &StopCondition::duration(seg.t_end - seg.t_start))?;

    let kept: Vec<_> =
        seg.events.iter().filter(|e| !matches!(e.kind, EventKind::Wall { axis: a, .. } if a == axis)).collect();
    let crossings = seg.events.len() - kept.len();
    if kept.len() != lifted.events.len() {
        return Err(Error::StreamMismatch {
            index: kept.len().min(lifted.events.len()),
            detail: format!("{} base events survive unfolding, lift has {}", kept.len(), lifted.events.len()),
        });
    }
    let mut max_time_error = 0.0f64;
    for (i, (b, l)) in kept.iter().zip(&lifted.events).enumerate() {
        if b.kind != l.kind {
            return Err(Error::StreamMismatch { index: i, detail: format!("{:?} vs {:?}", b.kind, l.kind) });
        }
        max_time_error = max_time_error.max((b.time - l.time).abs());
    }
    let mask = mirror;
    let mut max_fold_error = 0.0f64;
    let mut min_antipodal = f64::INFINITY;
    let mut check = |q1: &Vector, q2: &Vector, t: f64| -> Result<()> {
        let u = UnfoldedPoint { qhat1: q1.clone(), qhat2: q2.clone(), axis_mask: mask };
        let (f1, f2) = fold(&u);
        let base = seg.state_at(t.clamp(seg.t_start, seg.t_end))?;
        max_fold_error = max_fold_error.max(configuration_error((&f1, &f2), (&base.q1, &base.q2), &params));
        min_antipodal = min_antipodal.min(system.container.mirrored_difference(q1, q2, mirror).norm());
        Ok(())
    };
    check(&lifted.initial.q1, &lifted.initial.q2, lifted.t_start)?;
    for ev in &lifted.events {
        // compare just after the event so both sides carry post velocities
        check(&ev.q1, &ev.q2, ev.time)?;
    }
    check(&lifted.final_state.q1, &lifted.final_state.q2, lifted.t_end)?;
    Ok(AxisUnfolding { axis, lifted, crossings, max_fold_error, max_time_error, min_antipodal_distance: min_antipodal })
}

/// Closest approaches of the two opposite rays from `q0` to the integer
/// lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayDistances {
    pub d_plus: f64,
    pub d_minus: f64,
}

impl RayDistances {
    pub fn gap(&self) -> f64 {
        (self.d_plus - self.d_minus).abs()
    }
}

/// Smallest distance from `q0 + t v0`, `t` in `[lo, hi]`, to the lattice
/// points nearest the ray at the grid times.
fn ray_min(q0: &Vector, v0: &Vector, lo: f64, hi: f64, grid: usize) -> f64 {
    let n = grid.max(1);
    let h = (hi - lo) / n as f64;
    let vv = v0.norm_squared();
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let t = lo + h * i as f64;
        let p = q0 + v0 * t;
        let m = p.map(f64::round);
        // exact closest approach to m on the sampled stretch
        let t_star = if vv > 0.0 { (&m - q0).dot(v0) / vv } else { t };
        let t_star = t_star.clamp((t - h).max(lo), (t + h).min(hi));
        best = best.min((q0 + v0 * t_star - &m).norm());
    }
    best
}

/// Distances from the forward and backward rays of length `t_max` to
/// `Z^n`. The grid is refined automatically so that consecutive samples
/// are at most half a unit apart.
pub fn ray_distance_symmetry_test(q0: &Vector, v0: &Vector, t_max: f64, grid: usize) -> RayDistances {
    let speed = v0.norm();
    let needed = (2.0 * speed * t_max).ceil() as usize;
    let grid = grid.max(needed).max(1);
    RayDistances { d_plus: ray_min(q0, v0, 0.0, t_max, grid), d_minus: ray_min(q0, v0, -t_max, 0.0, grid) }
}
