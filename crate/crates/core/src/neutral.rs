//! Neutral subspaces: configuration variations whose velocity variations
//! vanish along a whole segment, their advances at the ball collisions,
//! and sufficiency (only the flow direction is neutral).
//!
//! Wall reflections act on neutral vectors by coordinate flips and free
//! flight leaves them unchanged, so only ball collisions constrain them.
//! The kernel is therefore built one collision at a time: each collision
//! restricts the current neutral basis to the kernel of its velocity
//! response. Compared with a single decomposition of the stacked response
//! of all collisions this keeps every step well conditioned, because the
//! stacked map also contains the exponentially growing responses of
//! directions that were already excluded.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::dynamics::{CollisionEvent, EventKind, TrajectorySegment};
use crate::error::{Error, Result};
use crate::geometry::{project, Vector};
use crate::model::ModelParams;
use crate::symbolic::{check_endpoints, is_rich, symbolic_sequence, Richness, SymbolicSequence};
use crate::tangent::{push_segment, push_tangent_ball, TangentVector};

/// Residual (relative to `|w|`) above which a vector is not neutral at a
/// collision.
pub const ADVANCE_RESIDUAL: f64 = 1e-8;
/// Relative velocity component below which a window is exceptional.
pub const EXCEPTIONAL_THRESHOLD: f64 = 1e-8;
/// Minimum projection required by the lemma hypotheses.
pub const HYPOTHESIS_MARGIN: f64 = 1e-6;
/// Agreement required of advances and projections in the lemma checks.
pub const LEMMA_TOLERANCE: f64 = 1e-8;

/// Advance of a configuration variation at one ball collision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Advance {
    pub alpha: f64,
    pub residual: f64,
}

/// Position variations of both balls just after a ball collision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionVariation {
    pub dq1: Vector,
    pub dq2: Vector,
}

/// Neutral subspace of a segment at its start time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeutralReport {
    pub dim: usize,
    /// Orthonormal basis; velocity parts are zero.
    pub basis: Vec<TangentVector>,
    /// Singular values of each collision's response on the neutral space
    /// entering it, relative to the response's largest singular value.
    pub singular_values: Vec<Vec<f64>>,
    /// Smallest separation factor between retained and discarded singular
    /// values and the threshold (infinite without collisions).
    pub spectral_gap: f64,
    /// `advances[b][i]`: basis vector `b` at ball collision `i`.
    pub advances: Vec<Vec<Advance>>,
    /// Whether each basis vector passed every advance residual test.
    pub neutral_ok: Vec<bool>,
    /// `after[b][i]`: position variation of basis vector `b` at `t_i + 0`.
    #[serde(skip)]
    pub after: Vec<Vec<PositionVariation>>,
    /// Per window `i >= 1`: whether the relative velocity leaving collision
    /// `i - 1` has (almost) no component off `Z_i`.
    pub exceptional_flags: Vec<bool>,
    /// Distance of the normalized flow direction from the span of `basis`.
    pub flow_residual: f64,
    /// Advances of the flow direction (all equal to one in exact arithmetic).
    pub flow_advances: Vec<f64>,
}

impl NeutralReport {
    /// JSON form `{dim, singular_values, advances, exceptional_flags}`.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": self.dim,
            "singular_values": self.singular_values,
            "advances": self.advances.iter().map(|a| a.iter().map(|x| x.alpha).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "exceptional_flags": self.exceptional_flags,
            "spectral_gap": self.spectral_gap,
        })
    }
}

/// Orthonormal basis of reduced configuration variations, as columns of a
/// `2 nu x (nu + k)` matrix: box axes vary each ball separately, periodic
/// axes move the balls oppositely.
pub fn domain_basis(params: &ModelParams) -> DMatrix<f64> {
    let nu = params.nu;
    let mut b = DMatrix::zeros(2 * nu, params.reduced_dim());
    let mut col = 0;
    for j in 0..nu {
        if j < params.k {
            b[(j, col)] = 1.0;
            b[(nu + j, col + 1)] = 1.0;
            col += 2;
        } else {
            b[(j, col)] = std::f64::consts::FRAC_1_SQRT_2;
            b[(nu + j, col)] = -std::f64::consts::FRAC_1_SQRT_2;
            col += 1;
        }
    }
    b
}

/// Velocity response `dQ -> dV+` of a ball collision for configuration
/// variations (`dV- = 0`), with relative velocity `v` entering and normal
/// `n`. Its kernel is the line of `v`.
pub fn collision_response(v: &Vector, n: &Vector, rho: f64) -> DMatrix<f64> {
    let nu = v.len();
    let vn = v.dot(n);
    let mut m = DMatrix::zeros(nu, nu);
    for c in 0..nu {
        let mut e = Vector::zeros(nu);
        e[c] = 1.0;
        let dtau = -n.dot(&e) / vn;
        let dn = (&e + v * dtau) / rho;
        let col = -(n * v.dot(&dn) + &dn * vn) * 2.0;
        m.set_column(c, &col);
    }
    m
}

/// One constraint-bearing step along a path through the segment.
enum Step<'a> {
    Wall {
        ball: usize,
        axis: usize,
    },
    /// Ball collision, with the relative velocity in the direction of travel
    /// along the path.
    Ball {
        v: Vector,
        n: &'a Vector,
        index: usize,
    },
}

fn forward_steps<'a>(events: &'a [CollisionEvent], ball_index: &[Option<usize>]) -> Result<Vec<Step<'a>>> {
    events.iter().zip(ball_index).map(|(ev, idx)| step_for(ev, *idx, false)).collect()
}

fn step_for(ev: &CollisionEvent, idx: Option<usize>, reversed: bool) -> Result<Step<'_>> {
    match ev.kind {
        EventKind::Wall { ball, axis, .. } => Ok(Step::Wall { ball, axis }),
        EventKind::BallBall => {
            let n = ev.normal.as_ref().ok_or_else(|| Error::InvalidState("ball event without normal".into()))?;
            let v = if reversed { -(&ev.v1_post - &ev.v2_post) } else { &ev.v1_pre - &ev.v2_pre };
            Ok(Step::Ball { v, n, index: idx.unwrap_or(0) })
        }
        EventKind::Antipodal | EventKind::Scatterer => {
            Err(Error::InvalidState("neutral spaces are defined for the standard model".into()))
        }
    }
}

/// Position variations of the domain basis carried along a path, plus the
/// current kernel in domain coordinates.
struct Walker {
    nu: usize,
    rho: f64,
    graze: f64,
    rank: f64,
    positions: DMatrix<f64>,
    kernel: DMatrix<f64>,
    spectra: Vec<(usize, Vec<f64>)>,
    gap: f64,
}

impl Walker {
    fn new(params: &ModelParams) -> Walker {
        let positions = domain_basis(params);
        let d = positions.ncols();
        Walker {
            nu: params.nu,
            rho: 2.0 * params.r,
            graze: params.tol.graze,
            rank: params.tol.rank,
            positions,
            kernel: DMatrix::identity(d, d),
            spectra: Vec::new(),
            gap: f64::INFINITY,
        }
    }

    fn relative(&self) -> DMatrix<f64> {
        let nu = self.nu;
        self.positions.rows(0, nu) - self.positions.rows(nu, nu)
    }

    fn walk(&mut self, steps: &[Step<'_>]) -> Result<()> {
        for step in steps {
            match step {
                Step::Wall { ball, axis } => {
                    let row = ball * self.nu + axis;
                    self.positions.row_mut(row).neg_mut();
                }
                Step::Ball { v, n, index } => {
                    let vn = v.dot(n);
                    if vn.abs() < self.graze {
                        return Err(Error::GrazingJacobian(vn));
                    }
                    let response = collision_response(v, n, self.rho) * self.relative();
                    let scale = response.singular_values().max();
                    self.restrict(&response, scale, *index)?;
                    self.reflect_relative(n);
                }
            }
        }
        Ok(())
    }

    fn restrict(&mut self, response: &DMatrix<f64>, scale: f64, index: usize) -> Result<()> {
        let m = self.kernel.ncols();
        if m == 0 {
            self.spectra.push((index, Vec::new()));
            return Ok(());
        }
        let threshold = self.rank * scale;
        let restricted = response * &self.kernel;
        // right singular vectors of a wide or tall matrix: decompose the
        // m x m Gram-free form by padding to at least m rows
        let rows = restricted.nrows().max(m);
        let mut padded = DMatrix::zeros(rows, m);
        padded.rows_mut(0, restricted.nrows()).copy_from(&restricted);
        let svd = SVD::new(padded, false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut keep = Vec::new();
        let mut spectrum = Vec::new();
        for (i, &s) in svd.singular_values.iter().enumerate() {
            spectrum.push(if scale > 0.0 { s / scale } else { 0.0 });
            if s > threshold / 10.0 && s < threshold * 10.0 {
                return Err(Error::RankIndeterminate { value: s, threshold });
            }
            if s <= threshold {
                keep.push(i);
                self.gap = self.gap.min(threshold / s.max(f64::MIN_POSITIVE));
            } else {
                self.gap = self.gap.min(s / threshold);
            }
        }
        let mut basis = DMatrix::zeros(m, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            basis.set_column(c, &v_t.row(i).transpose());
        }
        self.kernel = &self.kernel * basis;
        spectrum.sort_by(|a, b| b.total_cmp(a));
        self.spectra.push((index, spectrum));
        Ok(())
    }

    /// `dQ -> R_n dQ`, centre part unchanged.
    fn reflect_relative(&mut self, n: &Vector) {
        let nu = self.nu;
        for c in 0..self.positions.ncols() {
            let q1 = self.positions.view((0, c), (nu, 1)).clone_owned();
            let q2 = self.positions.view((nu, c), (nu, 1)).clone_owned();
            let rel = &q1 - &q2;
            let shift = n * (2.0 * n.dot(&rel.column(0)));
            // dq1 - dq2 loses 2<n, dQ> n, split evenly between the balls
            self.positions.view_mut((0, c), (nu, 1)).copy_from(&(&q1 - &shift * 0.5));
            self.positions.view_mut((nu, c), (nu, 1)).copy_from(&(&q2 + &shift * 0.5));
        }
    }
}

fn ball_indices(events: &[CollisionEvent]) -> Vec<Option<usize>> {
    let mut i = 0;
    events
        .iter()
        .map(|e| {
            if e.kind.is_ball() {
                i += 1;
                Some(i - 1)
            } else {
                None
            }
        })
        .collect()
}

fn check_segment(seg: &TrajectorySegment) -> Result<()> {
    if !seg.branch_warnings.is_empty() {
        return Err(Error::BranchWarningsPresent(seg.branch_warnings.len()));
    }
    if !seg.is_standard() {
        return Err(Error::InvalidState("neutral spaces are defined for the standard model".into()));
    }
    check_endpoints(seg)
}

/// Kernel (in domain coordinates) of the constraints of every ball
/// collision of `seg`, evaluated at time `t`.
fn kernel_at(seg: &TrajectorySegment, t: f64) -> Result<Walker> {
    let params = &seg.params;
    let idx = ball_indices(&seg.events);
    let split = seg.events.partition_point(|e| e.time <= t);
    let mut walker = Walker::new(params);
    walker.walk(&forward_steps(&seg.events[split..], &idx[split..])?)?;
    if split > 0 {
        // constraints before t: walk backwards in time from t
        let start = walker.kernel.clone();
        let spectra = std::mem::take(&mut walker.spectra);
        let gap = walker.gap;
        let mut back = Walker::new(params);
        back.kernel = start;
        back.gap = gap;
        let steps: Vec<Step<'_>> =
            (0..split).rev().map(|i| step_for(&seg.events[i], idx[i], true)).collect::<Result<_>>()?;
        back.walk(&steps)?;
        back.spectra.extend(spectra);
        back.spectra.sort_by_key(|(i, _)| *i);
        return Ok(back);
    }
    Ok(walker)
}

/// Dimension of the neutral space at an interior time `t`, computed from
/// constraints gathered forwards and backwards from `t`.
pub fn neutral_dim_at(seg: &TrajectorySegment, t: f64) -> Result<usize> {
    check_segment(seg)?;
    Ok(kernel_at(seg, t)?.kernel.ncols())
}

/// Neutral space of `seg` at its start time.
pub fn neutral_space(seg: &TrajectorySegment) -> Result<NeutralReport> {
    check_segment(seg)?;
    let params = &seg.params;
    let walker = kernel_at(seg, seg.t_start)?;
    let domain = domain_basis(params);
    let columns = &domain * &walker.kernel;
    let nu = params.nu;
    let zero = Vector::zeros(nu);
    let basis: Vec<TangentVector> = (0..columns.ncols())
        .map(|c| TangentVector {
            dq1: columns.view((0, c), (nu, 1)).column(0).into_owned(),
            dq2: columns.view((nu, c), (nu, 1)).column(0).into_owned(),
            dv1: zero.clone(),
            dv2: zero.clone(),
        })
        .collect();

    let mut advances = Vec::with_capacity(basis.len());
    let mut after = Vec::with_capacity(basis.len());
    let mut neutral_ok = Vec::with_capacity(basis.len());
    for w in &basis {
        let (a, p) = trace_advances(seg, w);
        neutral_ok.push(a.iter().all(|x| x.residual <= ADVANCE_RESIDUAL * w.norm()));
        advances.push(a);
        after.push(p);
    }
    let flow = TangentVector::flow_direction(&seg.initial);
    let flow_unit = flow.scale(1.0 / flow.norm());
    let mut projected = flow_unit.to_flat() * 0.0;
    for w in &basis {
        projected += w.to_flat() * w.to_flat().dot(&flow_unit.to_flat());
    }
    let flow_residual = (flow_unit.to_flat() - projected).norm();
    let flow_advances = trace_advances(seg, &flow).0.iter().map(|a| a.alpha).collect();

    let exceptional_flags = match symbolic_sequence(seg) {
        Ok(sigma) => exceptional_flags(seg, &sigma),
        Err(_) => Vec::new(),
    };
    Ok(NeutralReport {
        dim: basis.len(),
        basis,
        singular_values: walker.spectra.into_iter().map(|(_, s)| s).collect(),
        spectral_gap: walker.gap,
        advances,
        neutral_ok,
        after,
        exceptional_flags,
        flow_residual,
        flow_advances,
    })
}

/// Follow a configuration variation with zero velocity variation through
/// the segment, reading off its advance at every ball collision.
fn trace_advances(seg: &TrajectorySegment, w: &TangentVector) -> (Vec<Advance>, Vec<PositionVariation>) {
    let mut dq1 = w.dq1.clone();
    let mut dq2 = w.dq2.clone();
    let mut advances = Vec::new();
    let mut after = Vec::new();
    for ev in &seg.events {
        match ev.kind {
            EventKind::Wall { ball, axis, .. } => {
                let q = if ball == 0 { &mut dq1 } else { &mut dq2 };
                q[axis] = -q[axis];
            }
            EventKind::Scatterer => {}
            EventKind::BallBall | EventKind::Antipodal => {
                let v = &ev.v1_pre - &ev.v2_pre;
                let rel = &dq1 - &dq2;
                let alpha = rel.dot(&v) / v.norm_squared();
                let residual = (&rel - &v * alpha).norm();
                advances.push(Advance { alpha, residual });
                if let Some(n) = &ev.normal {
                    let shift = n * n.dot(&rel);
                    dq1 -= &shift;
                    dq2 += &shift;
                }
                after.push(PositionVariation { dq1: dq1.clone(), dq2: dq2.clone() });
            }
        }
    }
    (advances, after)
}

/// Per window `i >= 1`: `|P_{not Z_i}(v1 - v2)(t_{i-1} + 0)| < 1e-8` for
/// windows with `|Z_i| < nu`.
pub fn exceptional_flags(seg: &TrajectorySegment, sigma: &SymbolicSequence) -> Vec<bool> {
    let nu = seg.params.nu;
    let balls = seg.ball_event_indices();
    (0..sigma.n())
        .map(|w| {
            let ev = &seg.events[balls[w]];
            let dv = &ev.v1_post - &ev.v2_post;
            let off = sigma.z[w].complement(nu);
            // with Z_i = every axis the projection vanishes identically and
            // defines no exceptional set
            !off.is_empty() && project(&dv, off).norm() < EXCEPTIONAL_THRESHOLD
        })
        .collect()
}

/// Sufficiency: the neutral space is the flow line.
pub fn is_sufficient(seg: &TrajectorySegment) -> Result<bool> {
    Ok(neutral_space(seg)?.dim == 1)
}

/// Neutral dimension from one decomposition of the stacked response of
/// all collisions: the linearized flow of each domain vector is recorded
/// right after every ball collision. Only trustworthy on short segments.
pub fn stacked_response(seg: &TrajectorySegment) -> Result<DMatrix<f64>> {
    check_segment(seg)?;
    let params = &seg.params;
    let nu = params.nu;
    let domain = domain_basis(params);
    let n_ball = seg.ball_collision_count();
    let mut m = DMatrix::zeros(2 * nu * n_ball, domain.ncols());
    for c in 0..domain.ncols() {
        let mut w = TangentVector {
            dq1: domain.view((0, c), (nu, 1)).column(0).into_owned(),
            dq2: domain.view((nu, c), (nu, 1)).column(0).into_owned(),
            dv1: Vector::zeros(nu),
            dv2: Vector::zeros(nu),
        };
        let mut t = seg.t_start;
        let mut row = 0;
        for ev in &seg.events {
            w = crate::tangent::push_tangent_free(&w, ev.time - t);
            t = ev.time;
            w = match ev.kind {
                EventKind::Wall { ball, axis, .. } => crate::tangent::push_tangent_wall(&w, ball, axis),
                _ => {
                    let out = push_tangent_ball(&w, ev, params)?;
                    m.view_mut((row, c), (nu, 1)).copy_from(&out.dv1);
                    m.view_mut((row + nu, c), (nu, 1)).copy_from(&out.dv2);
                    row += 2 * nu;
                    out
                }
            };
        }
    }
    Ok(m)
}

/// Kernel dimension of [`stacked_response`] with threshold
/// `tol.rank * sigma_max`.
pub fn stacked_kernel_dim(seg: &TrajectorySegment) -> Result<usize> {
    let m = stacked_response(seg)?;
    let d = m.ncols();
    if m.nrows() == 0 {
        return Ok(d);
    }
    let s = m.singular_values();
    let threshold = seg.params.tol.rank * s.max();
    let mut rank = 0;
    for &x in s.iter() {
        if x > threshold / 10.0 && x < threshold * 10.0 {
            return Err(Error::RankIndeterminate { value: x, threshold });
        }
        if x > threshold {
            rank += 1;
        }
    }
    Ok(d - rank)
}

/// Outcome of a lemma check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaVerdict {
    pub lemma: String,
    pub passed: bool,
    pub dim: usize,
    /// Largest deviation measured by the check.
    pub max_error: f64,
    pub details: Vec<String>,
}

fn relative_velocity_after(seg: &TrajectorySegment, ball_collision: usize) -> Vector {
    let ev = &seg.events[seg.ball_event_indices()[ball_collision]];
    &ev.v1_post - &ev.v2_post
}

/// One ball-collision window: advances agree across it and the position
/// variations on `Z_1` follow the velocities.
pub fn check_lemma_3_6(seg: &TrajectorySegment) -> Result<LemmaVerdict> {
    let sigma = symbolic_sequence(seg)?;
    let nu = seg.params.nu;
    if sigma.n() != 1 {
        return Err(Error::HypothesisNotMet(format!("need exactly two ball collisions, found {}", sigma.n() + 1)));
    }
    let z1 = sigma.z[0];
    if z1.len() >= nu {
        return Err(Error::HypothesisNotMet(format!("|Z_1| = {} is not below nu", z1.len())));
    }
    let dv = relative_velocity_after(seg, 0);
    let off = project(&dv, z1.complement(nu)).norm();
    if off <= HYPOTHESIS_MARGIN {
        return Err(Error::HypothesisNotMet(format!("relative velocity off Z_1 is {off:e}")));
    }
    let report = neutral_space(seg)?;
    let ev0 = &seg.events[seg.ball_event_indices()[0]];
    let mut max_error = 0.0f64;
    let mut details = Vec::new();
    let mut vectors: Vec<(Vec<Advance>, Vec<PositionVariation>)> =
        report.basis.iter().map(|w| trace_advances(seg, w)).collect();
    vectors.push(trace_advances(seg, &TangentVector::flow_direction(&seg.initial)));
    for (b, (adv, after)) in vectors.iter().enumerate() {
        let gap = (adv[0].alpha - adv[1].alpha).abs();
        max_error = max_error.max(gap);
        for (ball, (dq, v)) in [(&after[0].dq1, &ev0.v1_post), (&after[0].dq2, &ev0.v2_post)].into_iter().enumerate() {
            let e = (project(dq, z1) - project(v, z1) * adv[0].alpha).norm();
            max_error = max_error.max(e);
            if e >= LEMMA_TOLERANCE {
                details.push(format!("vector {b} ball {}: projection error {e:e}", ball + 1));
            }
        }
        if gap >= LEMMA_TOLERANCE {
            details.push(format!("vector {b}: advances differ by {gap:e}"));
        }
    }
    Ok(LemmaVerdict { lemma: "3.6".into(), passed: details.is_empty(), dim: report.dim, max_error, details })
}

fn advances_spread(report: &NeutralReport) -> f64 {
    report
        .advances
        .iter()
        .map(|a| {
            let lo = a.iter().map(|x| x.alpha).fold(f64::INFINITY, f64::min);
            let hi = a.iter().map(|x| x.alpha).fold(f64::NEG_INFINITY, f64::max);
            if a.is_empty() {
                0.0
            } else {
                hi - lo
            }
        })
        .fold(0.0, f64::max)
}

/// Covering parity sets plus equal advances force sufficiency.
pub fn check_lemma_3_8(seg: &TrajectorySegment) -> Result<LemmaVerdict> {
    let sigma = symbolic_sequence(seg)?;
    let params = &seg.params;
    if sigma.union() != params.box_axes() {
        return Err(Error::HypothesisNotMet(format!("parity sets cover {:?}, not every box axis", sigma.union())));
    }
    let report = neutral_space(seg)?;
    let spread = advances_spread(&report);
    if spread >= LEMMA_TOLERANCE {
        return Err(Error::HypothesisNotMet(format!("advances differ by {spread:e}")));
    }
    let passed = report.dim == 1;
    let details = if passed { Vec::new() } else { vec![format!("neutral dimension {}", report.dim)] };
    Ok(LemmaVerdict { lemma: "3.8".into(), passed, dim: report.dim, max_error: spread, details })
}

/// Whether `z` has the shape `[full, empty.., proper nonempty]`.
fn pattern_3_9(z: &[crate::geometry::AxisSet], nu: usize) -> bool {
    let n = z.len();
    n >= 2
        && z[0].len() == nu
        && !z[n - 1].is_empty()
        && z[n - 1].len() < nu
        && z[1..n - 1].iter().all(|s| s.is_empty())
}

/// Full first parity set, empty middle, proper last set: sufficiency under
/// the two non-degeneracy conditions.
pub fn check_lemma_3_9(seg: &TrajectorySegment) -> Result<LemmaVerdict> {
    let sigma = symbolic_sequence(seg)?;
    let nu = seg.params.nu;
    if !pattern_3_9(&sigma.z, nu) {
        return Err(Error::PatternNotFound(format!("parity sets {:?}", sigma.z)));
    }
    let n = sigma.n();
    let zn = sigma.z[n - 1];
    let cond_i = project(&relative_velocity_after(seg, n - 1), zn.complement(nu)).norm();
    let cond_ii = project(&relative_velocity_after(seg, 0), zn).norm();
    if cond_i <= HYPOTHESIS_MARGIN || cond_ii <= HYPOTHESIS_MARGIN {
        return Err(Error::HypothesisNotMet(format!("non-degeneracy margins {cond_i:e}, {cond_ii:e}")));
    }
    let report = neutral_space(seg)?;
    let spread = advances_spread(&report);
    let mut details = Vec::new();
    if spread >= LEMMA_TOLERANCE {
        details.push(format!("advances differ by {spread:e}"));
    }
    if report.dim != 1 {
        details.push(format!("neutral dimension {}", report.dim));
    }
    Ok(LemmaVerdict { lemma: "3.9".into(), passed: details.is_empty(), dim: report.dim, max_error: spread, details })
}

/// Find consecutive ball collisions of `seg` whose parity sets have the
/// shape required by [`check_lemma_3_9`] and return that stretch, cut
/// halfway between neighbouring events.
pub fn find_lemma_3_9_window(seg: &TrajectorySegment) -> Result<TrajectorySegment> {
    let sigma = symbolic_sequence(seg)?;
    let nu = seg.params.nu;
    let balls = seg.ball_event_indices();
    for start in 0..sigma.n() {
        if sigma.z[start].len() != nu {
            continue;
        }
        for end in start + 1..sigma.n() {
            let window = &sigma.z[start..=end];
            if pattern_3_9(window, nu) {
                let first = balls[start];
                let last = balls[end + 1];
                let t_a = if first == 0 {
                    0.5 * (seg.t_start + seg.events[0].time)
                } else {
                    0.5 * (seg.events[first - 1].time + seg.events[first].time)
                };
                let t_b = match seg.events.get(last + 1) {
                    Some(next) => 0.5 * (seg.events[last].time + next.time),
                    None => 0.5 * (seg.events[last].time + seg.t_end),
                };
                return seg.slice(t_a, t_b);
            }
            if !sigma.z[end].is_empty() {
                break;
            }
        }
    }
    Err(Error::PatternNotFound("no window with a full first set, empty middle and proper last set".into()))
}

/// How the implication "rich and not exceptional implies sufficient" fared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Implication {
    Holds,
    Fails,
    /// Not rich: nothing to check.
    Vacuous,
    /// Rich but flagged exceptional: not asserted.
    NotAsserted,
}

/// Richness, sufficiency and exceptional flags of one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyLemmaRecord {
    pub rich: bool,
    pub sufficient: bool,
    pub exceptional: bool,
    pub flags: Vec<bool>,
    pub dim: usize,
    pub richness: Richness,
    pub implication: Implication,
}

/// Combine richness, the neutral space and the exceptional flags.
pub fn check_key_lemma_3_5(seg: &TrajectorySegment) -> Result<KeyLemmaRecord> {
    let sigma = symbolic_sequence(seg)?;
    let richness = is_rich(&sigma, &seg.params);
    let report = neutral_space(seg)?;
    let sufficient = report.dim == 1;
    let exceptional = report.exceptional_flags.iter().any(|&f| f);
    let implication = match (richness.rich, exceptional) {
        (false, _) => Implication::Vacuous,
        (true, true) => Implication::NotAsserted,
        (true, false) if sufficient => Implication::Holds,
        (true, false) => Implication::Fails,
    };
    Ok(KeyLemmaRecord {
        rich: richness.rich,
        sufficient,
        exceptional,
        flags: report.exceptional_flags,
        dim: report.dim,
        richness,
        implication,
    })
}

/// `DS^T w` restricted to velocity variations: the quantity a neutral
/// vector keeps at zero.
pub fn terminal_velocity_variation(seg: &TrajectorySegment, w: &TangentVector) -> Result<f64> {
    let out = push_segment(seg, w)?;
    Ok((out.dv1.norm_squared() + out.dv2.norm_squared()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, StopCondition};
    use crate::model::sample_liouville;

    #[test]
    fn domain_basis_is_orthonormal() {
        for (nu, k) in [(2, 2), (3, 1), (4, 0)] {
            let p = ModelParams::new(nu, k, 0.1).unwrap();
            let b = domain_basis(&p);
            assert_eq!(b.ncols(), nu + k);
            let g = b.transpose() * &b;
            assert!((g - DMatrix::identity(nu + k, nu + k)).norm() < 1e-15);
        }
    }

    #[test]
    fn response_kernel_is_relative_velocity() {
        let v = Vector::from_vec(vec![0.3, -0.9, 0.2]);
        let n = Vector::from_vec(vec![-0.6, 0.8, 0.0]);
        let m = collision_response(&v, &n, 0.2);
        assert!((&m * &v).norm() < 1e-14);
        let s = m.singular_values();
        assert_eq!(s.iter().filter(|&&x| x > 1e-10).count(), 2);
    }

    fn first_segment(p: &ModelParams, seed: u64, stop: StopCondition) -> TrajectorySegment {
        let x = sample_liouville(p, seed).unwrap();
        simulate(&x, &stop, p).unwrap()
    }

    #[test]
    fn collision_free_segment_is_fully_neutral() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let x = crate::model::PhasePoint::new(vec![0.2, 0.2], vec![0.8, 0.7], vec![0.0, 0.5], vec![0.0, -0.5]);
        let x = crate::model::PhasePoint { v1: x.v1 * 2f64.sqrt(), v2: x.v2 * 2f64.sqrt(), ..x };
        let seg = simulate(&x, &StopCondition::duration(3.0), &p).unwrap();
        assert_eq!(seg.ball_collision_count(), 0);
        let r = neutral_space(&seg).unwrap();
        assert_eq!(r.dim, 4);
        assert!(r.flow_residual < 1e-12);
        assert_eq!(stacked_kernel_dim(&seg).unwrap(), 4);
    }

    #[test]
    fn one_collision_leaves_three_dimensions() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let seg = first_segment(&p, 3, StopCondition::ball_collisions(1));
        let r = neutral_space(&seg).unwrap();
        assert_eq!(r.dim, 3);
        assert_eq!(stacked_kernel_dim(&seg).unwrap(), 3);
        for a in &r.flow_advances {
            assert!((a - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn incremental_and_stacked_kernels_agree_on_short_segments() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        for seed in 0..20 {
            let seg = first_segment(&p, seed, StopCondition::ball_collisions(4));
            let a = neutral_space(&seg).map(|r| r.dim);
            let b = stacked_kernel_dim(&seg);
            if let (Ok(a), Ok(b)) = (a, b) {
                assert_eq!(a, b, "seed {seed}");
            }
        }
    }

    #[test]
    fn dimension_does_not_depend_on_evaluation_time() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        for seed in 0..10 {
            let seg = first_segment(&p, seed, StopCondition::ball_collisions(6));
            let n = seg.events.len();
            let mid = 0.5 * (seg.events[n / 2].time + seg.events[n / 2 + 1].time);
            let start = neutral_space(&seg).unwrap().dim;
            assert_eq!(neutral_dim_at(&seg, mid).unwrap(), start, "seed {seed}");
        }
    }

    #[test]
    fn neutral_vectors_keep_zero_velocity_variation() {
        let p = ModelParams::new(3, 1, 0.1).unwrap();
        let seg = first_segment(&p, 8, StopCondition::ball_collisions(2));
        let r = neutral_space(&seg).unwrap();
        assert!(r.dim >= 1);
        for w in &r.basis {
            assert!(terminal_velocity_variation(&seg, w).unwrap() < 1e-10);
        }
    }
}
