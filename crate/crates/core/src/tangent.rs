//! Linearized flow: tangent vectors pushed through free flight, wall
//! reflections and ball collisions.
//!
//! At a ball collision the pair splits into a centre part `q1 + R q2`,
//! which passes through unchanged, and a relative part `q1 - R q2`, which
//! reflects off a sphere of radius `2r` like a point particle in a
//! dispersing billiard. `R` is the identity for genuine collisions and the
//! mirror of an antipodal surface otherwise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CollisionEvent, EventKind, StopCondition, TrajectorySegment};
use crate::error::{Error, Result};
use crate::geometry::{reflect, AxisSet, Vector};
use crate::model::{ModelParams, PhasePoint};

/// A variation `(dq1, dq2; dv1, dv2)` of a phase point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub dq1: Vector,
    pub dq2: Vector,
    pub dv1: Vector,
    pub dv2: Vector,
}

impl TangentVector {
    pub fn zeros(nu: usize) -> TangentVector {
        TangentVector { dq1: Vector::zeros(nu), dq2: Vector::zeros(nu), dv1: Vector::zeros(nu), dv2: Vector::zeros(nu) }
    }

    /// The flow direction `(v1, v2; 0, 0)` at `x`.
    pub fn flow_direction(x: &PhasePoint) -> TangentVector {
        let nu = x.dim();
        TangentVector { dq1: x.v1.clone(), dq2: x.v2.clone(), dv1: Vector::zeros(nu), dv2: Vector::zeros(nu) }
    }

    pub fn from_flat(nu: usize, flat: &[f64]) -> TangentVector {
        let part = |i: usize| Vector::from_column_slice(&flat[i * nu..(i + 1) * nu]);
        TangentVector { dq1: part(0), dq2: part(1), dv1: part(2), dv2: part(3) }
    }

    /// `[dq1, dq2, dv1, dv2]` stacked.
    pub fn to_flat(&self) -> Vector {
        let nu = self.dq1.len();
        let mut out = Vector::zeros(4 * nu);
        for (i, part) in [&self.dq1, &self.dq2, &self.dv1, &self.dv2].into_iter().enumerate() {
            out.rows_mut(i * nu, nu).copy_from(part);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        (self.dq1.norm_squared() + self.dq2.norm_squared() + self.dv1.norm_squared() + self.dv2.norm_squared()).sqrt()
    }

    pub fn scale(&self, s: f64) -> TangentVector {
        TangentVector { dq1: &self.dq1 * s, dq2: &self.dq2 * s, dv1: &self.dv1 * s, dv2: &self.dv2 * s }
    }

    pub fn add(&self, other: &TangentVector) -> TangentVector {
        TangentVector {
            dq1: &self.dq1 + &other.dq1,
            dq2: &self.dq2 + &other.dq2,
            dv1: &self.dv1 + &other.dv1,
            dv2: &self.dv2 + &other.dv2,
        }
    }

    /// `x + eps * w`.
    pub fn perturb(&self, x: &PhasePoint, eps: f64) -> PhasePoint {
        PhasePoint {
            q1: &x.q1 + &self.dq1 * eps,
            q2: &x.q2 + &self.dq2 * eps,
            v1: &x.v1 + &self.dv1 * eps,
            v2: &x.v2 + &self.dv2 * eps,
        }
    }
}

/// Free flight: `dq += t dv`.
pub fn push_tangent_free(w: &TangentVector, t: f64) -> TangentVector {
    TangentVector { dq1: &w.dq1 + &w.dv1 * t, dq2: &w.dq2 + &w.dv2 * t, dv1: w.dv1.clone(), dv2: w.dv2.clone() }
}

/// Flat wall of axis `axis` hit by ball `ball` (zero-based): the
/// coordinate flips in both the position and the velocity variation.
pub fn push_tangent_wall(w: &TangentVector, ball: usize, axis: usize) -> TangentVector {
    let mut out = w.clone();
    if ball == 0 {
        out.dq1[axis] = -out.dq1[axis];
        out.dv1[axis] = -out.dv1[axis];
    } else {
        out.dq2[axis] = -out.dq2[axis];
        out.dv2[axis] = -out.dv2[axis];
    }
    out
}

/// Variation of a point particle reflecting off a sphere of radius `rho`.
///
/// `v` is the incoming velocity, `n` the outward unit normal at contact,
/// `(dq, dv)` the incoming variation taken at the collision time of the
/// reference orbit. Returns the outgoing variation at the same time.
pub fn sphere_reflection_variation(
    dq: &Vector,
    dv: &Vector,
    v: &Vector,
    n: &Vector,
    rho: f64,
    graze: f64,
) -> Result<(Vector, Vector)> {
    let vn = v.dot(n);
    if vn.abs() < graze {
        return Err(Error::GrazingJacobian(vn));
    }
    // the perturbed orbit reaches the sphere later by dtau
    let dtau = -n.dot(dq) / vn;
    let dn = (dq + v * dtau) / rho;
    let reflect_n = |u: &Vector| u - n * (2.0 * u.dot(n));
    let dq_out = reflect_n(dq);
    let dv_out = reflect_n(dv) - (n * v.dot(&dn) + &dn * vn) * 2.0;
    Ok((dq_out, dv_out))
}

/// Ball collision (or antipodal contact with mirror `mirror`), given the
/// event's pre-state and normal.
pub fn push_tangent_contact(
    w: &TangentVector,
    pre: &PhasePoint,
    n: &Vector,
    mirror: AxisSet,
    radius: f64,
    graze: f64,
) -> Result<TangentVector> {
    let r = |u: &Vector| reflect(u, mirror);
    let v_rel = &pre.v1 - r(&pre.v2);
    let dq_rel = &w.dq1 - r(&w.dq2);
    let dv_rel = &w.dv1 - r(&w.dv2);
    let dq_mid = &w.dq1 + r(&w.dq2);
    let dv_mid = &w.dv1 + r(&w.dv2);
    let (dq_rel, dv_rel) = sphere_reflection_variation(&dq_rel, &dv_rel, &v_rel, n, 2.0 * radius, graze)?;
    Ok(TangentVector {
        dq1: (&dq_mid + &dq_rel) * 0.5,
        dq2: r(&((&dq_mid - &dq_rel) * 0.5)),
        dv1: (&dv_mid + &dv_rel) * 0.5,
        dv2: r(&((&dv_mid - &dv_rel) * 0.5)),
    })
}

/// Genuine ball-ball collision.
pub fn push_tangent_ball(w: &TangentVector, event: &CollisionEvent, params: &ModelParams) -> Result<TangentVector> {
    let n = event.normal.as_ref().ok_or_else(|| Error::InvalidState("ball event without normal".into()))?;
    push_tangent_contact(w, &event.pre_state(), n, AxisSet::EMPTY, params.r, params.tol.graze)
}

/// Apply the tangent map of one logged event of `seg`.
pub fn push_tangent_event(w: &TangentVector, seg: &TrajectorySegment, event: &CollisionEvent) -> Result<TangentVector> {
    match event.kind {
        EventKind::Wall { ball, axis, .. } => Ok(push_tangent_wall(w, ball, axis)),
        EventKind::BallBall | EventKind::Antipodal => {
            let n = event.normal.as_ref().ok_or_else(|| Error::InvalidState("contact event without normal".into()))?;
            let mirror = if event.kind == EventKind::BallBall {
                AxisSet::EMPTY
            } else {
                AxisSet::first(seg.system.container.dim())
            };
            push_tangent_contact(w, &event.pre_state(), n, mirror, seg.system.radius, seg.system.tol.graze)
        }
        EventKind::Scatterer => Err(Error::InvalidState("scatterer events belong to single-particle logs".into())),
    }
}

/// `DS^(t_end - t_start) w` along the whole segment.
pub fn push_segment(seg: &TrajectorySegment, w: &TangentVector) -> Result<TangentVector> {
    let mut out = w.clone();
    let mut t = seg.t_start;
    for ev in &seg.events {
        out = push_tangent_free(&out, ev.time - t);
        out = push_tangent_event(&out, seg, ev)?;
        t = ev.time;
    }
    Ok(push_tangent_free(&out, seg.t_end - t))
}

/// Random unit tangent vector in the reduced space at `x`: position and
/// velocity variations respect the periodic reduction and the velocity
/// variation is tangent to the energy sphere.
pub fn random_reduced_tangent<R: Rng>(x: &PhasePoint, params: &ModelParams, rng: &mut R) -> TangentVector {
    let nu = params.nu;
    let mut w = TangentVector::zeros(nu);
    for j in 0..nu {
        let g: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if j < params.k {
            (w.dq1[j], w.dq2[j], w.dv1[j], w.dv2[j]) = (g[0], g[1], g[2], g[3]);
        } else {
            (w.dq1[j], w.dq2[j], w.dv1[j], w.dv2[j]) = (g[0], -g[0], g[2], -g[2]);
        }
    }
    let along = (w.dv1.dot(&x.v1) + w.dv2.dot(&x.v2)) / x.energy();
    w.dv1 -= &x.v1 * along;
    w.dv2 -= &x.v2 * along;
    let n = w.norm();
    w.scale(1.0 / n)
}

/// Result of comparing a Jacobian-vector product with central differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceReport {
    pub epsilons: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub jvp_norm: f64,
    /// Number of events and how many are ball collisions.
    pub events: usize,
    pub ball_events: usize,
    pub passed: bool,
}

/// Relative error below which the comparison is limited by rounding.
pub const FD_FLOOR: f64 = 1e-7;

/// Compare `DS^T w` with `(S^T(x + eps w) - S^T(x - eps w)) / (2 eps)` for a
/// decreasing sequence of `eps`. The perturbed orbits must follow the same
/// event sequence as the reference orbit.
///
/// Passes when each decade either shrinks the error at least fivefold or
/// the error is already below [`FD_FLOOR`], and the smallest step has
/// relative error below `1e-4`.
pub fn finite_difference_check(
    x0: &PhasePoint,
    w: &TangentVector,
    duration: f64,
    epsilons: &[f64],
    params: &ModelParams,
) -> Result<FiniteDifferenceReport> {
    let stop = StopCondition::duration(duration);
    let base = crate::dynamics::simulate(x0, &stop, params)?;
    let jvp = push_segment(&base, w)?;
    let jvp_flat = jvp.to_flat();
    let container = params.container();
    let kinds: Vec<EventKind> = base.events.iter().map(|e| e.kind).collect();
    let mut errors = Vec::new();
    for &eps in epsilons {
        let plus = crate::dynamics::simulate(&w.perturb(x0, eps), &stop, params)?;
        let minus = crate::dynamics::simulate(&w.perturb(x0, -eps), &stop, params)?;
        for run in [&plus, &minus] {
            let other: Vec<EventKind> = run.events.iter().map(|e| e.kind).collect();
            if other != kinds {
                return Err(Error::HypothesisNotMet(format!("perturbation {eps} changes the event sequence")));
            }
        }
        let (a, b) = (&plus.final_state, &minus.final_state);
        let fd = TangentVector {
            dq1: container.min_image(&a.q1, &b.q1) / (2.0 * eps),
            dq2: container.min_image(&a.q2, &b.q2) / (2.0 * eps),
            dv1: (&a.v1 - &b.v1) / (2.0 * eps),
            dv2: (&a.v2 - &b.v2) / (2.0 * eps),
        };
        errors.push((fd.to_flat() - &jvp_flat).norm() / jvp_flat.norm().max(f64::MIN_POSITIVE));
    }
    let mut passed = errors.last().is_some_and(|&e| e < 1e-4);
    for pair in errors.windows(2) {
        if !(pair[1] <= pair[0] / 5.0 || pair[1] < FD_FLOOR) {
            passed = false;
        }
    }
    Ok(FiniteDifferenceReport {
        epsilons: epsilons.to_vec(),
        relative_errors: errors,
        jvp_norm: jvp_flat.norm(),
        events: base.events.len(),
        ball_events: base.ball_collision_count(),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{apply_ball_collision, simulate};
    use crate::model::{rng_for, sample_liouville};

    #[test]
    fn free_flight_and_walls() {
        let mut rng = rng_for(1, 0);
        let x = sample_liouville(&ModelParams::new(3, 2, 0.1).unwrap(), 1).unwrap();
        let p = ModelParams::new(3, 2, 0.1).unwrap();
        let w = random_reduced_tangent(&x, &p, &mut rng);
        assert_eq!(push_tangent_free(&w, 0.0), w);
        let mut still = w.clone();
        still.dv1.fill(0.0);
        still.dv2.fill(0.0);
        assert_eq!(push_tangent_free(&still, 3.0), still);
        let once = push_tangent_wall(&w, 1, 0);
        assert_eq!(push_tangent_wall(&once, 1, 0), w);
        assert_eq!(push_tangent_wall(&still, 0, 1).dv1, still.dv1);
    }

    #[test]
    fn flow_direction_maps_to_flow_direction() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let x = PhasePoint::new(vec![0.4, 0.5], vec![0.6, 0.45], vec![0.6, 0.1], vec![-0.7, 0.37]);
        let mut x = x;
        // put the balls in contact along their separation
        let d = (&x.q1 - &x.q2).normalize();
        x.q2 = &x.q1 - d * 0.2;
        let s = x.energy().sqrt();
        x.v1 /= s;
        x.v2 /= s;
        let (y, n) = apply_ball_collision(&x, &p).unwrap();
        let w = TangentVector::flow_direction(&x);
        let out = push_tangent_contact(&w, &x, &n, AxisSet::EMPTY, p.r, p.tol.graze).unwrap();
        let expect = TangentVector::flow_direction(&y);
        assert!((out.to_flat() - expect.to_flat()).norm() < 1e-14);
    }

    #[test]
    fn advance_variation_stays_neutral() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let mut x = PhasePoint::new(vec![0.3, 0.5], vec![0.5, 0.5], vec![0.6, 0.2], vec![-0.5, 0.1]);
        let d = Vector::from_vec(vec![0.8, 0.6]);
        x.q2 = &x.q1 + d * 0.2;
        let s = x.energy().sqrt();
        x.v1 /= s;
        x.v2 /= s;
        let (y, n) = apply_ball_collision(&x, &p).unwrap();
        // relative displacement along the relative velocity, centre fixed
        let alpha = 0.37;
        let dv_rel = x.relative_velocity() * alpha;
        let w = TangentVector { dq1: &dv_rel * 0.5, dq2: &dv_rel * -0.5, dv1: Vector::zeros(2), dv2: Vector::zeros(2) };
        let out = push_tangent_contact(&w, &x, &n, AxisSet::EMPTY, p.r, p.tol.graze).unwrap();
        assert!(out.dv1.norm() < 1e-15 && out.dv2.norm() < 1e-15);
        let expect = y.relative_velocity() * alpha;
        assert!((&out.dq1 - &out.dq2 - expect).norm() < 1e-15);
    }

    #[test]
    fn grazing_jacobian_is_refused() {
        let v = Vector::from_vec(vec![1.0, 0.0]);
        let n = Vector::from_vec(vec![0.0, 1.0]);
        let z = Vector::zeros(2);
        assert!(matches!(sphere_reflection_variation(&z, &z, &v, &n, 0.2, 1e-10), Err(Error::GrazingJacobian(_))));
    }

    #[test]
    fn push_is_linear() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let x = sample_liouville(&p, 4).unwrap();
        let seg = simulate(&x, &StopCondition::events(30), &p).unwrap();
        let mut rng = rng_for(4, 1);
        let a = random_reduced_tangent(&x, &p, &mut rng);
        let b = random_reduced_tangent(&x, &p, &mut rng);
        let lhs = push_segment(&seg, &a.scale(2.0).add(&b.scale(-0.5))).unwrap();
        let rhs = push_segment(&seg, &a).unwrap().scale(2.0).add(&push_segment(&seg, &b).unwrap().scale(-0.5));
        let scale = lhs.norm().max(1.0);
        assert!((lhs.to_flat() - rhs.to_flat()).norm() <= 1e-12 * scale);
    }

    #[test]
    fn finite_differences_converge_on_short_runs() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let mut passed = 0;
        for seed in 0..10 {
            let x = sample_liouville(&p, seed).unwrap();
            let w = random_reduced_tangent(&x, &p, &mut rng_for(seed, 7));
            let duration = simulate(&x, &StopCondition::ball_collisions(1), &p).unwrap().t_end;
            match finite_difference_check(&x, &w, duration, &[1e-4, 1e-5, 1e-6], &p) {
                Ok(r) => {
                    assert!(r.passed, "{seed}: {r:?}");
                    passed += 1;
                }
                Err(Error::HypothesisNotMet(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(passed >= 8);
    }
}
