//! Scan for orbits that avoid ball collisions for a long time.
//!
//! Walls only flip box components of the velocities, so the projection of
//! `v1 - v2` onto the periodic axes stays constant until the first ball
//! collision and is recorded as each flagged orbit's annotation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, StopCondition};
use crate::error::{Error, Result};
use crate::geometry::project;
use crate::model::{rng_for, sample_liouville_with, ModelParams, PhasePoint};

/// A sample with no ball collision on `[0, t_free]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvoidingOrbit {
    pub index: usize,
    /// Periodic components of `v1 - v2` (empty when `k = nu`).
    pub periodic_relative_velocity: Vec<f64>,
    pub annotation: f64,
}

/// Outcome of a ball-avoiding scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvoidingReport {
    pub params: ModelParams,
    pub seed: u64,
    pub t_free: f64,
    pub n_samples: usize,
    pub flagged: Vec<AvoidingOrbit>,
    /// Flagged orbits whose annotation is empty (`k = nu`).
    pub n_empty_annotations: usize,
    pub discards: Vec<(usize, String)>,
}

/// `|P(v1 - v2)|` onto the periodic axes, with its components.
pub fn periodic_relative_velocity(x: &PhasePoint, params: &ModelParams) -> (Vec<f64>, f64) {
    let p = project(&x.relative_velocity(), params.periodic_axes());
    let components = (params.k..params.nu).map(|j| p[j]).collect();
    (components, p.norm())
}

/// Whether the orbit of `x0` has no ball collision on `[0, t_free]`.
pub fn avoids_collisions(x0: &PhasePoint, t_free: f64, params: &ModelParams) -> Result<bool> {
    if t_free == 0.0 {
        return Ok(true);
    }
    let stop = StopCondition { max_ball_collisions: Some(1), t_max: Some(t_free), ..Default::default() };
    Ok(simulate(x0, &stop, params)?.ball_collision_count() == 0)
}

/// Flag the Liouville samples whose orbits have no ball collision on
/// `[0, t_free]`.
pub fn ball_avoiding_scan(params: &ModelParams, n_samples: usize, t_free: f64, seed: u64) -> Result<AvoidingReport> {
    params.check()?;
    if !(t_free >= 0.0 && t_free.is_finite()) {
        return Err(Error::InvalidParams(format!("t_free {t_free} must be finite and non-negative")));
    }
    let outcomes: Vec<std::result::Result<Option<AvoidingOrbit>, String>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let x = sample_liouville_with(params, &mut rng_for(seed, i as u64)).map_err(|e| e.to_string())?;
            match avoids_collisions(&x, t_free, params) {
                Ok(true) => {
                    let (components, annotation) = periodic_relative_velocity(&x, params);
                    Ok(Some(AvoidingOrbit { index: i, periodic_relative_velocity: components, annotation }))
                }
                Ok(false) => Ok(None),
                Err(e) => Err(e.to_string()),
            }
        })
        .collect();
    let mut flagged = Vec::new();
    let mut discards = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(Some(orbit)) => flagged.push(orbit),
            Ok(None) => {}
            Err(reason) => discards.push((i, reason)),
        }
    }
    let n_empty_annotations = flagged.iter().filter(|o| o.periodic_relative_velocity.is_empty()).count();
    Ok(AvoidingReport { params: *params, seed, t_free, n_samples, flagged, n_empty_annotations, discards })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_flags_everything() {
        let p = ModelParams::new(3, 1, 0.1).unwrap();
        let r = ball_avoiding_scan(&p, 12, 0.0, 5).unwrap();
        assert_eq!(r.flagged.len(), 12);
        assert!(r.flagged.iter().all(|o| o.periodic_relative_velocity.len() == 2));
    }

    #[test]
    fn separate_lanes_never_meet() {
        // box coordinates 0.3 apart, motion only along the periodic axis
        let p = ModelParams::new(2, 1, 0.1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = PhasePoint::new(vec![0.3, 0.2], vec![0.7, 0.8], vec![0.0, s], vec![0.0, -s]);
        assert!(avoids_collisions(&x, 500.0, &p).unwrap());
        let (c, a) = periodic_relative_velocity(&x, &p);
        assert_eq!(c, vec![2.0 * s]);
        assert!((a - 2f64.sqrt()).abs() < 1e-15);
    }
}
