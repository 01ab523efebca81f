//! The two-ball model: parameters, reduced phase points, validation and
//! Liouville-uniform sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisSet, Container, Vector};

/// Numerical tolerances carried with the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSet {
    /// Events closer than this in time are treated as simultaneous.
    pub event: f64,
    /// Ball impacts with normal relative speed below this are grazing.
    pub graze: f64,
    /// Relative singular-value threshold for kernel computations.
    pub rank: f64,
    /// Agreement required between folded and base positions.
    pub fold: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        ToleranceSet { event: 1e-12, graze: 1e-10, rank: 1e-8, fold: 1e-9 }
    }
}

impl ToleranceSet {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [("event", self.event), ("graze", self.graze), ("rank", self.rank), ("fold", self.fold)] {
            if !(v > 0.0 && v < 1e-3) {
                return Err(Error::InvalidParams(format!("tolerance {name} = {v} outside (0, 1e-3)")));
            }
        }
        Ok(())
    }
}

/// The `(nu, k, r)` triple: dimension, number of walled axes, ball radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub nu: usize,
    pub k: usize,
    pub r: f64,
    #[serde(default)]
    pub tol: ToleranceSet,
}

impl ModelParams {
    pub fn new(nu: usize, k: usize, r: f64) -> Result<ModelParams> {
        let p = ModelParams { nu, k, r, tol: ToleranceSet::default() };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.nu < 2 || self.nu > 64 {
            return Err(Error::InvalidParams(format!("nu = {} must be in 2..=64", self.nu)));
        }
        if self.k > self.nu {
            return Err(Error::InvalidParams(format!("k = {} exceeds nu = {}", self.k, self.nu)));
        }
        if !(self.r > 0.0 && self.r < 0.25) {
            return Err(Error::InvalidParams(format!("r = {} outside (0, 1/4)", self.r)));
        }
        self.tol.check()
    }

    pub fn container(&self) -> Container {
        Container::standard(self.nu, self.k)
    }

    /// The walled axes `A = {1..k}` (zero-based `0..k`).
    pub fn box_axes(&self) -> AxisSet {
        AxisSet::first(self.k)
    }

    pub fn periodic_axes(&self) -> AxisSet {
        self.box_axes().complement(self.nu)
    }

    /// Dimension `nu + k` of the reduced configuration space.
    pub fn reduced_dim(&self) -> usize {
        self.nu + self.k
    }
}

/// Positions and velocities of both balls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q1: Vector,
    pub q2: Vector,
    pub v1: Vector,
    pub v2: Vector,
}

impl PhasePoint {
    pub fn new(q1: Vec<f64>, q2: Vec<f64>, v1: Vec<f64>, v2: Vec<f64>) -> PhasePoint {
        PhasePoint {
            q1: Vector::from_vec(q1),
            q2: Vector::from_vec(q2),
            v1: Vector::from_vec(v1),
            v2: Vector::from_vec(v2),
        }
    }

    pub fn dim(&self) -> usize {
        self.q1.len()
    }

    /// `|v1|^2 + |v2|^2` (twice the kinetic energy).
    pub fn energy(&self) -> f64 {
        self.v1.norm_squared() + self.v2.norm_squared()
    }

    pub fn position(&self, ball: usize) -> &Vector {
        if ball == 0 {
            &self.q1
        } else {
            &self.q2
        }
    }

    pub fn velocity(&self, ball: usize) -> &Vector {
        if ball == 0 {
            &self.v1
        } else {
            &self.v2
        }
    }

    pub fn velocity_mut(&mut self, ball: usize) -> &mut Vector {
        if ball == 0 {
            &mut self.v1
        } else {
            &mut self.v2
        }
    }

    pub fn position_mut(&mut self, ball: usize) -> &mut Vector {
        if ball == 0 {
            &mut self.q1
        } else {
            &mut self.q2
        }
    }

    /// Both velocities negated.
    pub fn reversed(&self) -> PhasePoint {
        PhasePoint { q1: self.q1.clone(), q2: self.q2.clone(), v1: -&self.v1, v2: -&self.v2 }
    }

    pub fn relative_velocity(&self) -> Vector {
        &self.v1 - &self.v2
    }
}

/// A violated invariant of a phase point, with its size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Dimension { expected: usize, found: usize },
    NonFinite,
    OutOfRange { ball: usize, axis: usize, value: f64 },
    Overlap { distance: f64, minimum: f64 },
    Energy { value: f64 },
    PositionReduction { axis: usize, residual: f64 },
    VelocityReduction { axis: usize, residual: f64 },
}

impl Violation {
    /// Size of the violation in the natural unit of the invariant.
    pub fn magnitude(&self) -> f64 {
        match *self {
            Violation::Dimension { .. } | Violation::NonFinite => f64::INFINITY,
            Violation::OutOfRange { value, .. } => {
                if value < 0.0 {
                    -value
                } else {
                    value - 1.0
                }
            }
            Violation::Overlap { distance, minimum } => minimum - distance,
            Violation::Energy { value } => (value - 1.0).abs(),
            Violation::PositionReduction { residual, .. } | Violation::VelocityReduction { residual, .. } => residual,
        }
    }
}

/// Drift below this is not reported by [`validate`].
pub const VALIDATION_TOLERANCE: f64 = 1e-9;

/// Every violated invariant of `x` under `params`; empty means valid.
pub fn validate(params: &ModelParams, x: &PhasePoint) -> Vec<Violation> {
    validate_with(params, x, VALIDATION_TOLERANCE)
}

/// [`validate`] with an explicit drift tolerance.
pub fn validate_with(params: &ModelParams, x: &PhasePoint, tol: f64) -> Vec<Violation> {
    let nu = params.nu;
    let mut out = Vec::new();
    for v in [&x.q1, &x.q2, &x.v1, &x.v2] {
        if v.len() != nu {
            out.push(Violation::Dimension { expected: nu, found: v.len() });
            return out;
        }
        if v.iter().any(|c| !c.is_finite()) {
            out.push(Violation::NonFinite);
            return out;
        }
    }
    for (ball, q) in [&x.q1, &x.q2].into_iter().enumerate() {
        for j in 0..params.k {
            if q[j] < -tol || q[j] > 1.0 + tol {
                out.push(Violation::OutOfRange { ball: ball + 1, axis: j + 1, value: q[j] });
            }
        }
    }
    let dist = torus_min_distance(&x.q1, &x.q2, params);
    let minimum = 2.0 * params.r;
    if dist < minimum - tol {
        out.push(Violation::Overlap { distance: dist, minimum });
    }
    let e = x.energy();
    if (e - 1.0).abs() > tol {
        out.push(Violation::Energy { value: e });
    }
    for j in params.k..nu {
        let s = x.q1[j] + x.q2[j];
        let residual = (s - s.round()).abs();
        if residual > tol {
            out.push(Violation::PositionReduction { axis: j + 1, residual });
        }
        let residual = (x.v1[j] + x.v2[j]).abs();
        if residual > tol {
            out.push(Violation::VelocityReduction { axis: j + 1, residual });
        }
    }
    out
}

/// Distance between ball centres in `[0,1]^k x T^(nu-k)`.
pub fn torus_min_distance(q1: &Vector, q2: &Vector, params: &ModelParams) -> f64 {
    let mut s = 0.0;
    for j in 0..params.nu {
        let mut d = q1[j] - q2[j];
        if j >= params.k {
            d -= d.round();
        }
        s += d * d;
    }
    s.sqrt()
}

/// Rejections allowed before [`sample_liouville`] gives up.
pub const REJECTION_BUDGET: u64 = 1_000_000;

/// Deterministic RNG for a `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw a phase point from the Liouville measure.
pub fn sample_liouville(params: &ModelParams, seed: u64) -> Result<PhasePoint> {
    let mut rng = rng_for(seed, 0);
    sample_liouville_with(params, &mut rng)
}

/// [`sample_liouville`] driven by a caller-owned RNG.
pub fn sample_liouville_with<R: Rng>(params: &ModelParams, rng: &mut R) -> Result<PhasePoint> {
    params.check()?;
    let (nu, k) = (params.nu, params.k);
    let mut rejections = 0u64;
    let (q1, q2) = loop {
        let q1 = Vector::from_fn(nu, |_, _| rng.random::<f64>());
        let q2 = Vector::from_fn(nu, |j, _| if j < k { rng.random::<f64>() } else { 0.0 });
        let mut q2 = q2;
        for j in k..nu {
            q2[j] = crate::geometry::wrap_into(-q1[j], 1.0);
        }
        if torus_min_distance(&q1, &q2, params) >= 2.0 * params.r {
            break (q1, q2);
        }
        rejections += 1;
        if rejections >= REJECTION_BUDGET {
            return Err(Error::RejectionBudgetExceeded(REJECTION_BUDGET));
        }
    };
    // Gaussian in the constraint subspace {pi_2(v1 + v2) = 0}: independent
    // coordinates on box axes, antisymmetric pairs (e_j, -e_j)/sqrt 2 on
    // periodic axes.
    let mut v1 = Vector::zeros(nu);
    let mut v2 = Vector::zeros(nu);
    for j in 0..nu {
        if j < k {
            v1[j] = rng.sample(StandardNormal);
            v2[j] = rng.sample(StandardNormal);
        } else {
            let c: f64 = rng.sample(StandardNormal);
            v1[j] = c * std::f64::consts::FRAC_1_SQRT_2;
            v2[j] = -v1[j];
        }
    }
    let norm = (v1.norm_squared() + v2.norm_squared()).sqrt();
    v1 /= norm;
    v2 /= norm;
    Ok(PhasePoint { q1, q2, v1, v2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head_on() -> (ModelParams, PhasePoint) {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (p, PhasePoint::new(vec![0.3, 0.5], vec![0.7, 0.5], vec![s, 0.0], vec![-s, 0.0]))
    }

    #[test]
    fn valid_head_on_state() {
        let (p, x) = head_on();
        assert!(validate(&p, &x).is_empty());
    }

    #[test]
    fn overlap_is_reported_with_distance() {
        let (p, mut x) = head_on();
        x.q2[0] = 0.45;
        let v = validate(&p, &x);
        assert_eq!(v.len(), 1);
        match v[0] {
            Violation::Overlap { distance, minimum } => {
                assert!((distance - 0.15).abs() < 1e-12);
                assert!((minimum - 0.2).abs() < 1e-15);
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn energy_violation_reports_sum() {
        let (p, mut x) = head_on();
        x.v2[0] = -1.0;
        let v = validate(&p, &x);
        assert_eq!(v, vec![Violation::Energy { value: 1.5 }]);
    }

    #[test]
    fn periodic_distance_uses_minimal_image() {
        let p = ModelParams::new(2, 1, 0.05).unwrap();
        let a = Vector::from_vec(vec![0.5, 0.1]);
        let b = Vector::from_vec(vec![0.5, 0.9]);
        assert!((torus_min_distance(&a, &b, &p) - 0.2).abs() < 1e-12);
        assert_eq!(torus_min_distance(&a, &a, &p), 0.0);
    }

    #[test]
    fn periodic_distance_matches_offset_enumeration() {
        // nu = 3, k = 1: brute force over offsets {-1, 0, 1}^2 on the periodic axes
        let p = ModelParams::new(3, 1, 0.1).unwrap();
        let mut rng = rng_for(99, 3);
        for _ in 0..200 {
            let a = Vector::from_fn(3, |_, _| rng.random::<f64>());
            let b = Vector::from_fn(3, |_, _| rng.random::<f64>());
            let mut best = f64::INFINITY;
            for m1 in -1..=1 {
                for m2 in -1..=1 {
                    let d0 = a[0] - b[0];
                    let d1 = a[1] - b[1] - m1 as f64;
                    let d2 = a[2] - b[2] - m2 as f64;
                    best = best.min((d0 * d0 + d1 * d1 + d2 * d2).sqrt());
                }
            }
            assert!((torus_min_distance(&a, &b, &p) - best).abs() < 1e-14);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        for (nu, k) in [(2, 2), (2, 0), (3, 1), (4, 2)] {
            let p = ModelParams::new(nu, k, 0.1).unwrap();
            for seed in 0..50 {
                let x = sample_liouville(&p, seed).unwrap();
                assert!(validate(&p, &x).is_empty(), "{nu} {k} {seed}");
                assert_eq!(x, sample_liouville(&p, seed).unwrap());
                for j in k..nu {
                    assert!((x.v1[j] + x.v2[j]).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn parameter_checks() {
        assert!(ModelParams::new(1, 0, 0.1).is_err());
        assert!(ModelParams::new(2, 3, 0.1).is_err());
        assert!(ModelParams::new(2, 2, 0.25).is_err());
        assert!(ModelParams::new(2, 2, 0.0).is_err());
        let mut p = ModelParams::new(2, 2, 0.1).unwrap();
        p.tol.rank = 1e-2;
        assert!(p.check().is_err());
    }
}
