//! Lyapunov spectra by propagating a tangent frame along a simulated orbit
//! and re-orthonormalizing it with QR decompositions at a fixed period.
//!
//! Frames are stored column-wise as `[positions; velocities]`. For the
//! pair flow the rows are `[dq1, dq2, dv1, dv2]`; for the product flow they
//! are `[dx, dy, dxdot, dydot]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, StopCondition, TrajectorySegment};
use crate::error::{Error, Result};
use crate::geometry::Vector;
use crate::model::{ModelParams, PhasePoint, ToleranceSet};
use crate::neutral::domain_basis;
use crate::product::{simulate_product, Subsystem, XYState};
use crate::tangent::{push_tangent_event, sphere_reflection_variation, TangentVector};

/// Number of time blocks used for the confidence estimates.
pub const LYAPUNOV_BLOCKS: usize = 20;
/// Half-width of the zero band in confidence units.
pub const ZERO_BAND: f64 = 3.0;

/// Estimated spectrum with block-average confidence half-widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Exponents per unit time, in decreasing order.
    pub exponents: Vec<f64>,
    /// Standard error of each exponent over the blocks.
    pub confidence: Vec<f64>,
    pub n_events: usize,
    pub reorthonormalization_period: f64,
    pub duration: f64,
    /// `block_exponents[b][i]`: exponent `i` estimated from block `b` alone.
    pub block_exponents: Vec<Vec<f64>>,
}

/// Mean and standard error of a sample (infinite error below two values).
fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A combination of exponents checked against zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroCheck {
    pub value: f64,
    pub confidence: f64,
    pub passed: bool,
}

impl ZeroCheck {
    fn from_blocks(value: f64, per_block: &[f64]) -> ZeroCheck {
        let (_, confidence) = mean_and_error(per_block);
        ZeroCheck { value, confidence, passed: value.abs() <= ZERO_BAND * confidence }
    }
}

impl LyapunovReport {
    fn degenerate(dim: usize, period: f64) -> LyapunovReport {
        LyapunovReport {
            exponents: vec![0.0; dim],
            confidence: vec![f64::INFINITY; dim],
            n_events: 0,
            reorthonormalization_period: period,
            duration: 0.0,
            block_exponents: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Whether exponent `i` lies within the zero band.
    pub fn in_zero_band(&self, i: usize) -> bool {
        self.exponents[i].abs() <= ZERO_BAND * self.confidence[i]
    }

    pub fn zero_band_count(&self) -> usize {
        (0..self.dim()).filter(|&i| self.in_zero_band(i)).count()
    }

    /// The sum of all exponents, which vanishes for a volume-preserving flow.
    pub fn sum_check(&self) -> ZeroCheck {
        let per_block: Vec<f64> = self.block_exponents.iter().map(|b| b.iter().sum()).collect();
        ZeroCheck::from_blocks(self.exponents.iter().sum(), &per_block)
    }

    /// `lambda_i + lambda_(m-1-i)` for the outer half of the spectrum.
    pub fn pairing_checks(&self) -> Vec<ZeroCheck> {
        let m = self.dim();
        (0..m / 2)
            .map(|i| {
                let per_block: Vec<f64> = self.block_exponents.iter().map(|b| b[i] + b[m - 1 - i]).collect();
                ZeroCheck::from_blocks(self.exponents[i] + self.exponents[m - 1 - i], &per_block)
            })
            .collect()
    }
}

/// QR-based accumulator of logarithmic growth rates.
struct Benettin {
    frame: DMatrix<f64>,
    half: usize,
    period: f64,
    t: f64,
    next_qr: f64,
    block_len: f64,
    block_logs: Vec<Vec<f64>>,
    block_time: Vec<f64>,
    last_qr: f64,
    /// Orthogonal projector onto the invariant subspace the frame spans.
    projector: Option<DMatrix<f64>>,
    /// `(row, u)`: velocity rows `row..row + len(u)` stay orthogonal to `u`.
    velocity_normals: Vec<(usize, Vector)>,
}

impl Benettin {
    fn new(frame: DMatrix<f64>, period: f64, duration: f64) -> Benettin {
        let m = frame.ncols();
        Benettin {
            half: frame.nrows() / 2,
            frame,
            period,
            t: 0.0,
            next_qr: period,
            block_len: duration / LYAPUNOV_BLOCKS as f64,
            block_logs: vec![vec![0.0; m]; LYAPUNOV_BLOCKS],
            block_time: vec![0.0; LYAPUNOV_BLOCKS],
            last_qr: 0.0,
            projector: None,
            velocity_normals: Vec::new(),
        }
    }

    fn free(&mut self, dt: f64) {
        let h = self.half;
        let v = self.frame.rows(h, h) * dt;
        let mut q = self.frame.rows_mut(0, h);
        q += v;
        self.t += dt;
    }

    /// Free flight to `t`, re-orthonormalizing at every scheduled time on
    /// the way.
    fn advance_to(&mut self, t: f64) {
        while self.next_qr <= t {
            self.free(self.next_qr - self.t);
            self.orthonormalize();
            self.next_qr += self.period;
        }
        self.free(t - self.t);
    }

    /// Remove round-off components outside the invariant subspace. They are
    /// not contracted by the flow and would otherwise take over the
    /// contracting columns.
    fn constrain(&mut self) {
        if let Some(p) = &self.projector {
            self.frame = p * &self.frame;
        }
        for (row, u) in &self.velocity_normals {
            let unit = u / u.norm();
            for c in 0..self.frame.ncols() {
                let mut dv = self.frame.view_mut((*row, c), (unit.len(), 1));
                let along = dv.dot(&unit);
                dv -= &unit * along;
            }
        }
    }

    fn orthonormalize(&mut self) {
        self.constrain();
        let qr = self.frame.clone().qr();
        let r = qr.r();
        let mut q = qr.q();
        let b = ((self.t / self.block_len) as usize).min(LYAPUNOV_BLOCKS - 1);
        for i in 0..r.ncols() {
            let d = r[(i, i)];
            self.block_logs[b][i] += d.abs().ln();
            if d < 0.0 {
                q.column_mut(i).neg_mut();
            }
        }
        self.block_time[b] += self.t - self.last_qr;
        self.last_qr = self.t;
        self.frame = q;
    }

    fn finish(mut self, t_end: f64, n_events: usize) -> LyapunovReport {
        self.advance_to(t_end);
        if self.last_qr < t_end {
            self.orthonormalize();
        }
        let m = self.frame.ncols();
        let blocks: Vec<Vec<f64>> = self
            .block_logs
            .iter()
            .zip(&self.block_time)
            .filter(|(_, &dt)| dt > 0.0)
            .map(|(logs, &dt)| logs.iter().map(|l| l / dt).collect())
            .collect();
        let mut rows: Vec<(f64, f64, usize)> = (0..m)
            .map(|i| {
                let total: f64 = self.block_logs.iter().map(|b| b[i]).sum();
                let per_block: Vec<f64> = blocks.iter().map(|b| b[i]).collect();
                (total / t_end, mean_and_error(&per_block).1, i)
            })
            .collect();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        let order: Vec<usize> = rows.iter().map(|r| r.2).collect();
        LyapunovReport {
            exponents: rows.iter().map(|r| r.0).collect(),
            confidence: rows.iter().map(|r| r.1).collect(),
            n_events,
            reorthonormalization_period: self.period,
            duration: t_end,
            block_exponents: blocks.iter().map(|b| order.iter().map(|&i| b[i]).collect()).collect(),
        }
    }
}

fn check_period(period: f64) -> Result<()> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidParams(format!("reorthonormalization period {period} must be positive")));
    }
    Ok(())
}

fn singular(e: Error) -> Error {
    match e {
        Error::GrazingImpact { time, normal_speed } => {
            Error::SingularOrbit(format!("grazing impact at t = {time} (normal speed {normal_speed:e})"))
        }
        Error::GrazingJacobian(vn) => Error::SingularOrbit(format!("grazing collision in the tangent map ({vn:e})")),
        Error::BranchAmbiguity { time, gap } => {
            Error::SingularOrbit(format!("simultaneous events at t = {time} (gap {gap:e})"))
        }
        other => other,
    }
}

/// Reduced tangent frame of the pair flow: `domain_basis` in positions and
/// in velocities, `2 (nu + k)` columns.
pub fn pair_frame(params: &ModelParams) -> DMatrix<f64> {
    let b = domain_basis(params);
    let (rows, d) = (b.nrows(), b.ncols());
    let mut frame = DMatrix::zeros(2 * rows, 2 * d);
    frame.view_mut((0, 0), (rows, d)).copy_from(&b);
    frame.view_mut((rows, d), (rows, d)).copy_from(&b);
    frame
}

/// Spectrum of the pair flow along the orbit of `x0` over `n_events`
/// events.
pub fn lyapunov_spectrum(
    x0: &PhasePoint,
    n_events: usize,
    reortho_period: f64,
    params: &ModelParams,
) -> Result<LyapunovReport> {
    check_period(reortho_period)?;
    let frame = pair_frame(params);
    if n_events == 0 {
        return Ok(LyapunovReport::degenerate(frame.ncols(), reortho_period));
    }
    let seg = simulate(x0, &StopCondition::events(n_events), params).map_err(singular)?;
    pair_spectrum(&seg, frame, reortho_period)
}

/// Spectrum along an already simulated segment. `frame` must have
/// orthonormal columns spanning a subspace invariant under the tangent flow.
pub fn pair_spectrum(seg: &TrajectorySegment, frame: DMatrix<f64>, reortho_period: f64) -> Result<LyapunovReport> {
    check_period(reortho_period)?;
    let nu = seg.params.nu;
    let t_end = seg.t_end - seg.t_start;
    if seg.events.is_empty() || t_end <= 0.0 {
        return Ok(LyapunovReport::degenerate(frame.ncols(), reortho_period));
    }
    let projector = &frame * frame.transpose();
    let mut acc = Benettin::new(frame, reortho_period, t_end);
    acc.projector = Some(projector);
    for ev in &seg.events {
        acc.advance_to(ev.time - seg.t_start);
        for c in 0..acc.frame.ncols() {
            let w = TangentVector::from_flat(nu, acc.frame.column(c).as_slice());
            let out = push_tangent_event(&w, seg, ev).map_err(singular)?;
            acc.frame.set_column(c, &out.to_flat());
        }
    }
    Ok(acc.finish(t_end, seg.events.len()))
}

/// Orthonormal basis of the complement of `u` in `R^n` (columns), from the
/// Householder reflection taking `e_0` to `u / |u|`.
fn complement(u: &Vector) -> DMatrix<f64> {
    let n = u.len();
    let mut w = u / u.norm();
    let s = if w[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += s;
    let h = DMatrix::identity(n, n) - (&w * w.transpose()) * (2.0 / w.norm_squared());
    h.columns(1, n - 1).into_owned()
}

/// Tangent frame of the product flow at fixed subsystem energies: all
/// position variations, and velocity variations orthogonal to each
/// subsystem's velocity; `2 (2 nu - 1)` columns.
pub fn product_frame(z: &XYState) -> DMatrix<f64> {
    let nu = z.dim();
    let m = 2 * (2 * nu - 1);
    let mut frame = DMatrix::zeros(4 * nu, m);
    for j in 0..2 * nu {
        frame[(j, j)] = 1.0;
    }
    let cx = complement(&z.xdot);
    let cy = complement(&z.ydot);
    frame.view_mut((2 * nu, 2 * nu), (nu, nu - 1)).copy_from(&cx);
    frame.view_mut((3 * nu, 3 * nu - 1), (nu, nu - 1)).copy_from(&cy);
    frame
}

/// Spectrum of the product of the two Sinai billiards started at `z0`,
/// over `n_events` events of both subsystems together.
pub fn product_lyapunov_spectrum(
    z0: &XYState,
    radius: f64,
    n_events: usize,
    reortho_period: f64,
    tol: ToleranceSet,
) -> Result<LyapunovReport> {
    check_period(reortho_period)?;
    let nu = z0.dim();
    let frame = product_frame(z0);
    if n_events == 0 {
        return Ok(LyapunovReport::degenerate(frame.ncols(), reortho_period));
    }
    let run = simulate_product(z0, radius, &StopCondition::events(n_events), tol).map_err(singular)?;
    if run.t_end <= 0.0 {
        return Ok(LyapunovReport::degenerate(frame.ncols(), reortho_period));
    }
    let mut acc = Benettin::new(frame, reortho_period, run.t_end);
    acc.velocity_normals = vec![(2 * nu, z0.xdot.clone()), (3 * nu, z0.ydot.clone())];
    for (which, ev) in run.merged() {
        acc.advance_to(ev.time);
        let (offset, slot) = match which {
            Subsystem::X => (0, 0),
            Subsystem::Y => (nu, 1),
        };
        acc.velocity_normals[slot].1 = ev.u_post.clone();
        for c in 0..acc.frame.ncols() {
            let col = acc.frame.column(c);
            let dq = col.rows(offset, nu).into_owned();
            let dv = col.rows(2 * nu + offset, nu).into_owned();
            let (dq, dv) =
                sphere_reflection_variation(&dq, &dv, &ev.u_pre, &ev.normal, radius, tol.graze).map_err(singular)?;
            acc.frame.view_mut((offset, c), (nu, 1)).copy_from(&dq);
            acc.frame.view_mut((2 * nu + offset, c), (nu, 1)).copy_from(&dv);
        }
    }
    Ok(acc.finish(run.t_end, run.x.events.len() + run.y.events.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_liouville;

    #[test]
    fn no_events_is_degenerate() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let x = sample_liouville(&p, 1).unwrap();
        let r = lyapunov_spectrum(&x, 0, 1.0, &p).unwrap();
        assert_eq!(r.exponents, vec![0.0; 8]);
        assert!(r.confidence.iter().all(|c| c.is_infinite()));
    }

    #[test]
    fn frames_are_orthonormal() {
        let p = ModelParams::new(3, 1, 0.1).unwrap();
        let f = pair_frame(&p);
        assert_eq!(f.ncols(), 8);
        assert!((f.transpose() * &f - DMatrix::identity(8, 8)).norm() < 1e-14);
        let z = XYState {
            x: Vector::from_vec(vec![0.25, 0.25, 0.1]),
            y: Vector::from_vec(vec![0.25, 0.1, 0.25]),
            xdot: Vector::from_vec(vec![-0.3, 0.2, 0.1]),
            ydot: Vector::from_vec(vec![0.0, 0.0, 0.4]),
        };
        let f = product_frame(&z);
        assert_eq!(f.ncols(), 10);
        assert!((f.transpose() * &f - DMatrix::identity(10, 10)).norm() < 1e-14);
        let u = f.rows(6, 3).transpose() * &z.xdot;
        assert!(u.norm() < 1e-15);
    }

    #[test]
    fn collision_free_segment_is_degenerate() {
        let p = ModelParams::new(2, 0, 0.1).unwrap();
        let x = PhasePoint::new(vec![0.3, 0.1], vec![0.7, 0.9], vec![0.0, 0.5f64.sqrt()], vec![0.0, -(0.5f64.sqrt())]);
        let seg = simulate(&x, &StopCondition::duration(1e3), &p).unwrap();
        assert_eq!(seg.events.len(), 0);
        let r = pair_spectrum(&seg, pair_frame(&p), 1.0).unwrap();
        assert_eq!(r.n_events, 0);
        assert_eq!(r.zero_band_count(), 4);
    }
}
