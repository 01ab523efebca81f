//! Time averages along orbits against Liouville ensemble averages.
//!
//! Observables are integrated exactly between events: positions move
//! linearly and velocities are constant on each flight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PairSystem, StopCondition};
use crate::error::{Error, Result};
use crate::geometry::Vector;
use crate::model::{rng_for, sample_liouville_with, torus_min_distance, ModelParams, PhasePoint};

/// Margin added to the contact distance by the proximity observable.
pub const PROXIMITY_MARGIN: f64 = 0.05;
/// Length of the simulation chunks an orbit is integrated in.
const ORBIT_CHUNK: f64 = 100.0;
/// Stream offset separating ensemble samples from orbit starts.
const ENSEMBLE_STREAM: u64 = 1 << 40;
/// Stream offset between successive attempts of a singular orbit.
const RETRY_STREAM: u64 = 1 << 48;
/// Attempts per orbit before giving up on its slot.
const MAX_ATTEMPTS: u64 = 16;

/// The observable catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `1[dist(q1, q2) < 2r + 0.05]`.
    Proximity,
    /// First box coordinate of ball 1.
    BoxCoordinate,
    /// `|v1|^2`.
    SpeedShare,
    /// `|v1|^2 + |v2|^2`, identically one on the unit energy shell.
    TotalEnergy,
}

impl Observable {
    /// The three non-trivial observables.
    pub const CATALOG: [Observable; 3] = [Observable::Proximity, Observable::BoxCoordinate, Observable::SpeedShare];

    pub fn id(self) -> &'static str {
        match self {
            Observable::Proximity => "proximity",
            Observable::BoxCoordinate => "box_coordinate",
            Observable::SpeedShare => "speed_share",
            Observable::TotalEnergy => "total_energy",
        }
    }

    pub fn parse(s: &str) -> Result<Observable> {
        [Observable::Proximity, Observable::BoxCoordinate, Observable::SpeedShare, Observable::TotalEnergy]
            .into_iter()
            .find(|o| o.id() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown observable {s:?}")))
    }

    fn check(self, params: &ModelParams) -> Result<()> {
        if self == Observable::BoxCoordinate && params.k == 0 {
            return Err(Error::InvalidParams("the box coordinate needs k >= 1".into()));
        }
        Ok(())
    }

    /// Value at a phase point.
    pub fn value(self, x: &PhasePoint, params: &ModelParams) -> f64 {
        match self {
            Observable::Proximity => {
                f64::from(u8::from(torus_min_distance(&x.q1, &x.q2, params) < 2.0 * params.r + PROXIMITY_MARGIN))
            }
            Observable::BoxCoordinate => x.q1[0],
            Observable::SpeedShare => x.v1.norm_squared(),
            Observable::TotalEnergy => 1.0,
        }
    }

    /// Integral over a free flight of duration `dt` starting at `x`.
    fn flight_integral(self, x: &PhasePoint, dt: f64, params: &ModelParams) -> f64 {
        match self {
            Observable::Proximity => proximity_time(x, dt, params),
            Observable::BoxCoordinate => (x.q1[0] + 0.5 * x.v1[0] * dt) * dt,
            Observable::SpeedShare => x.v1.norm_squared() * dt,
            Observable::TotalEnergy => dt,
        }
    }
}

/// Time within `[0, dt]` that the free flight from `x` spends with the
/// (minimum-image) centre distance below `2r + margin`.
fn proximity_time(x: &PhasePoint, dt: f64, params: &ModelParams) -> f64 {
    let reach = 2.0 * params.r + PROXIMITY_MARGIN;
    let d0 = &x.q1 - &x.q2;
    let w = &x.v1 - &x.v2;
    let nu = params.nu;
    // integer shifts of the periodic coordinates that can come within reach
    let ranges: Vec<(i64, i64)> = (0..nu)
        .map(|j| {
            if j < params.k {
                return (0, 0);
            }
            let (a, b) = (d0[j], d0[j] + w[j] * dt);
            ((-(a.max(b)) - reach).ceil() as i64, (-(a.min(b)) + reach).floor() as i64)
        })
        .collect();
    let mut intervals = Vec::new();
    let mut shift: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        if shift.iter().zip(&ranges).all(|(s, r)| s <= &r.1) {
            let d = &d0 + Vector::from_iterator(nu, shift.iter().map(|&s| s as f64));
            let a = w.norm_squared();
            let b = d.dot(&w);
            let c = d.norm_squared() - reach * reach;
            if a == 0.0 {
                if c < 0.0 {
                    intervals.push((0.0, dt));
                }
            } else {
                let disc = b * b - a * c;
                if disc > 0.0 {
                    let s = disc.sqrt();
                    let (lo, hi) = (((-b - s) / a).max(0.0), ((-b + s) / a).min(dt));
                    if lo < hi {
                        intervals.push((lo, hi));
                    }
                }
            }
        }
        // odometer over the shift ranges
        let mut j = 0;
        loop {
            if j == nu {
                return merged_length(intervals);
            }
            if shift[j] < ranges[j].1 {
                shift[j] += 1;
                break;
            }
            shift[j] = ranges[j].0;
            j += 1;
        }
    }
}

fn merged_length(mut intervals: Vec<(f64, f64)>) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (lo, hi) in intervals {
        current = match current {
            Some((a, b)) if lo <= b => Some((a, b.max(hi))),
            Some((a, b)) => {
                total += b - a;
                Some((lo, hi))
            }
            None => Some((lo, hi)),
        };
    }
    total + current.map_or(0.0, |(a, b)| b - a)
}

/// Time averages of several observables along the orbit of `x0` over
/// `[0, t_orbit]`.
pub fn time_averages(
    x0: &PhasePoint,
    t_orbit: f64,
    observables: &[Observable],
    params: &ModelParams,
) -> Result<Vec<f64>> {
    params.check()?;
    for o in observables {
        o.check(params)?;
    }
    if t_orbit == 0.0 {
        return Ok(observables.iter().map(|o| o.value(x0, params)).collect());
    }
    let system = PairSystem::standard(params);
    system.check_start(params, x0)?;
    let mut integrals = vec![0.0; observables.len()];
    let mut x = x0.clone();
    let mut t = 0.0;
    while t < t_orbit {
        let chunk = ORBIT_CHUNK.min(t_orbit - t);
        let seg = system.simulate(params, &x, t, &StopCondition::duration(chunk))?;
        let mut flight_start = seg.initial.clone();
        let mut t_prev = seg.t_start;
        for ev in &seg.events {
            for (acc, o) in integrals.iter_mut().zip(observables) {
                *acc += o.flight_integral(&flight_start, ev.time - t_prev, params);
            }
            flight_start = ev.post_state();
            t_prev = ev.time;
        }
        for (acc, o) in integrals.iter_mut().zip(observables) {
            *acc += o.flight_integral(&flight_start, seg.t_end - t_prev, params);
        }
        x = seg.final_state;
        t = if chunk == t_orbit - t { t_orbit } else { seg.t_end };
    }
    Ok(observables
        .iter()
        .zip(integrals)
        .map(|(o, i)| if *o == Observable::TotalEnergy { 1.0 } else { i / t_orbit })
        .collect())
}

/// Time averages against an ensemble average for one observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub observable: Observable,
    pub params: ModelParams,
    pub seed: u64,
    pub t_orbit: f64,
    pub time_averages: Vec<f64>,
    pub ensemble_average: f64,
    /// Monte Carlo standard error of `ensemble_average`.
    pub ensemble_standard_error: f64,
    pub n_ensemble: usize,
    /// Sample standard deviation of the time averages.
    pub dispersion: f64,
    /// Largest `|time average - ensemble average|`.
    pub max_deviation: f64,
    /// Orbit starts replaced because their orbit was singular.
    pub resampled: usize,
}

impl ErgodicReport {
    /// `max_deviation` in units of the ensemble standard error.
    pub fn deviation_in_errors(&self) -> f64 {
        if self.max_deviation == 0.0 {
            0.0
        } else {
            self.max_deviation / self.ensemble_standard_error
        }
    }
}

/// Ensemble mean and standard error of each observable over `n`
/// Liouville samples.
pub fn ensemble_averages(
    params: &ModelParams,
    observables: &[Observable],
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let samples: Vec<PhasePoint> = (0..n)
        .into_par_iter()
        .map(|i| sample_liouville_with(params, &mut rng_for(seed, ENSEMBLE_STREAM + i as u64)))
        .collect::<Result<_>>()?;
    Ok(observables
        .iter()
        .map(|o| {
            let values: Vec<f64> = samples.iter().map(|x| o.value(x, params)).collect();
            mean_and_standard_error(&values)
        })
        .collect())
}

fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Time averages of every observable along orbit `i`, resampling the start
/// when the orbit turns out singular.
fn orbit_averages(
    params: &ModelParams,
    observables: &[Observable],
    t_orbit: f64,
    seed: u64,
    i: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let x = sample_liouville_with(params, &mut rng_for(seed, attempt * RETRY_STREAM + i as u64))?;
        match time_averages(&x, t_orbit, observables, params) {
            Ok(v) => return Ok((v, attempt as usize)),
            Err(e @ (Error::GrazingImpact { .. } | Error::BranchAmbiguity { .. })) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// [`ergodic_average`] for several observables sharing the same orbits and
/// ensemble.
pub fn ergodic_averages(
    params: &ModelParams,
    observables: &[Observable],
    n_orbits: usize,
    t_orbit: f64,
    n_ensemble: usize,
    seed: u64,
) -> Result<Vec<ErgodicReport>> {
    params.check()?;
    for o in observables {
        o.check(params)?;
    }
    if !(t_orbit >= 0.0 && t_orbit.is_finite()) {
        return Err(Error::InvalidParams(format!("orbit length {t_orbit} must be finite and non-negative")));
    }
    let orbits: Vec<(Vec<f64>, usize)> = (0..n_orbits)
        .into_par_iter()
        .map(|i| orbit_averages(params, observables, t_orbit, seed, i))
        .collect::<Result<_>>()?;
    let resampled = orbits.iter().map(|o| o.1).sum();
    let ensemble = ensemble_averages(params, observables, n_ensemble, seed)?;
    Ok(observables
        .iter()
        .enumerate()
        .map(|(k, &observable)| {
            let time_averages: Vec<f64> = orbits.iter().map(|o| o.0[k]).collect();
            let (ensemble_average, ensemble_standard_error) = ensemble[k];
            let (_, se) = mean_and_standard_error(&time_averages);
            let dispersion = if time_averages.len() < 2 { 0.0 } else { se * (time_averages.len() as f64).sqrt() };
            let max_deviation = time_averages.iter().map(|a| (a - ensemble_average).abs()).fold(0.0, f64::max);
            ErgodicReport {
                observable,
                params: *params,
                seed,
                t_orbit,
                time_averages,
                ensemble_average,
                ensemble_standard_error,
                n_ensemble,
                dispersion,
                max_deviation,
                resampled,
            }
        })
        .collect())
}

/// Time averages of `observable` along `n_orbits` Liouville-sampled orbits
/// of length `t_orbit`, against its average over `n_ensemble` independent
/// Liouville samples.
pub fn ergodic_average(
    params: &ModelParams,
    observable: Observable,
    n_orbits: usize,
    t_orbit: f64,
    n_ensemble: usize,
    seed: u64,
) -> Result<ErgodicReport> {
    Ok(ergodic_averages(params, &[observable], n_orbits, t_orbit, n_ensemble, seed)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merged_intervals() {
        assert_eq!(merged_length(vec![(0.0, 1.0), (0.5, 2.0), (3.0, 4.0)]), 3.0);
        assert_eq!(merged_length(Vec::new()), 0.0);
    }

    #[test]
    fn head_on_proximity() {
        // relative speed 2, gap closes from 0.6 to 0.25 in 0.175
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let x = PhasePoint::new(vec![0.2, 0.5], vec![0.8, 0.5], vec![1.0, 0.0], vec![-1.0, 0.0]);
        let t = proximity_time(&x, 0.2, &p);
        assert!((t - 0.025).abs() < 1e-12, "{t}");
    }

    #[test]
    fn proximity_across_the_seam() {
        // periodic second axis: the balls are 0.2 apart through the seam
        let p = ModelParams::new(2, 1, 0.1).unwrap();
        let x = PhasePoint::new(vec![0.5, 0.1], vec![0.5, 0.9], vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(proximity_time(&x, 1.5, &p), 1.5);
        assert_eq!(Observable::Proximity.value(&x, &p), 1.0);
    }

    #[test]
    fn zero_length_orbit_is_instantaneous() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let x = crate::model::sample_liouville(&p, 4).unwrap();
        let v = time_averages(&x, 0.0, &Observable::CATALOG, &p).unwrap();
        assert_eq!(v[2], x.v1.norm_squared());
        assert_eq!(v[1], x.q1[0]);
    }

    #[test]
    fn constant_observable_has_no_dispersion() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let r = ergodic_average(&p, Observable::TotalEnergy, 4, 20.0, 100, 2).unwrap();
        assert!(r.time_averages.iter().all(|&a| a == 1.0));
        assert_eq!(r.ensemble_average, 1.0);
        assert_eq!(r.dispersion, 0.0);
    }

    #[test]
    fn box_coordinate_needs_a_box_axis() {
        let p = ModelParams::new(2, 0, 0.1).unwrap();
        assert!(ergodic_average(&p, Observable::BoxCoordinate, 1, 1.0, 10, 0).is_err());
    }
}
