//! The orthogonal cylindric billiard of two balls on the doubled torus and
//! its factorization into two Sinai billiards.
//!
//! The pair moves on `R^nu / 2Z^nu` and reflects at the genuine cylinder
//! `|q1 - q2| = 2r` and the antipodal cylinder `|q1 + q2| = 2r`. Halving
//! every coordinate moves it to the unit torus, where `x = (q1 + q2) / 2`
//! and `y = (q1 - q2) / 2` each perform a Sinai billiard among spheres of
//! radius `r / 2` centred at the half-lattice `G = {0, 1/2}^nu`.

use serde::{Deserialize, Serialize};

use crate::dynamics::jsonl::{EventRecord, LogHeader};
use crate::dynamics::{CollisionEvent, EventKind, PairSystem, StopCondition, Surface, SurfaceRole, TrajectorySegment};
use crate::error::{Error, Result};
use crate::geometry::{wrap_into, AxisSet, Container, Vector};
use crate::model::{rng_for, sample_liouville_with, ModelParams, PhasePoint, ToleranceSet};

/// Agreement required between event times of the two simulations.
pub const STREAM_TIME_TOLERANCE: f64 = 1e-9;

/// Spacing of the scatterer lattice on the unit torus.
const CELL: f64 = 0.5;

/// Time without a scatterer hit after which a count-limited run gives up.
const IDLE_LIMIT: f64 = 1e6;

/// Covering coordinates: `q1 = x + y`, `q2 = x - y` on the unit torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XYState {
    pub x: Vector,
    pub y: Vector,
    pub xdot: Vector,
    pub ydot: Vector,
}

impl XYState {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn e1(&self) -> f64 {
        0.5 * self.xdot.norm_squared()
    }

    pub fn e2(&self) -> f64 {
        0.5 * self.ydot.norm_squared()
    }
}

fn wrap_unit(v: Vector) -> Vector {
    v.map(|c| wrap_into(c, 1.0))
}

/// Distance from `p` to the half-lattice `G` on the unit torus.
pub fn half_lattice_distance(p: &Vector) -> f64 {
    p.map(|c| c - (c / CELL).round() * CELL).norm()
}

/// `x = (q1 + q2) / 2`, `y = (q1 - q2) / 2`, velocities likewise, with
/// positions reduced to `[0, 1)`.
pub fn to_xy(q1: &Vector, q2: &Vector, v1: &Vector, v2: &Vector) -> XYState {
    XYState {
        x: wrap_unit((q1 + q2) * 0.5),
        y: wrap_unit((q1 - q2) * 0.5),
        xdot: (v1 + v2) * 0.5,
        ydot: (v1 - v2) * 0.5,
    }
}

/// Inverse of [`to_xy`] on its branch: `(q1, q2, v1, v2)`.
pub fn from_xy(z: &XYState) -> (Vector, Vector, Vector, Vector) {
    (wrap_unit(&z.x + &z.y), wrap_unit(&z.x - &z.y), &z.xdot + &z.ydot, &z.xdot - &z.ydot)
}

/// Overlaps of `z` with the scatterers: which of `x`, `y` lies closer than
/// `radius - slack` to `G`.
pub fn xy_violations(z: &XYState, radius: f64, slack: f64) -> Vec<String> {
    let mut out = Vec::new();
    for (name, p) in [("x", &z.x), ("y", &z.y)] {
        let d = half_lattice_distance(p);
        if d < radius - slack {
            out.push(format!("{name} at distance {d} from the half-lattice, scatterer radius {radius}"));
        }
    }
    out
}

/// Scatterer radius after rescaling the doubled torus to the unit torus.
pub fn scatterer_radius(params: &ModelParams) -> f64 {
    params.r / 2.0
}

/// Two balls on the circumference-2 torus reflecting at the genuine and
/// the antipodal cylinder.
pub fn doubled_torus_system(params: &ModelParams) -> PairSystem {
    PairSystem {
        container: Container::torus(params.nu, 2.0),
        radius: params.r,
        surfaces: vec![Surface::GENUINE, Surface { mirror: AxisSet::first(params.nu), role: SurfaceRole::Collide }],
        tol: params.tol,
    }
}

/// Halve a doubled-torus state and pass to covering coordinates.
pub fn pair_to_xy(x: &PhasePoint) -> XYState {
    to_xy(&(&x.q1 * 0.5), &(&x.q2 * 0.5), &(&x.v1 * 0.5), &(&x.v2 * 0.5))
}

/// Inverse of [`pair_to_xy`].
pub fn xy_to_pair(z: &XYState) -> PhasePoint {
    let (q1, q2, v1, v2) = from_xy(z);
    PhasePoint { q1: q1 * 2.0, q2: q2 * 2.0, v1: v1 * 2.0, v2: v2 * 2.0 }
}

fn require_full_box(params: &ModelParams) -> Result<()> {
    params.check()?;
    if params.k != params.nu {
        return Err(Error::InvalidParams(format!(
            "the cylindric billiard needs every axis walled (k = nu), got k = {} and nu = {}",
            params.k, params.nu
        )));
    }
    Ok(())
}

/// Simulate the doubled-torus pair dynamics from `x0` (positions in
/// `[0, 2)`, any energy).
pub fn simulate_pair(x0: &PhasePoint, stop: &StopCondition, params: &ModelParams) -> Result<TrajectorySegment> {
    require_full_box(params)?;
    let system = doubled_torus_system(params);
    let slack = crate::dynamics::PRECONDITION_SLACK;
    for s in &system.surfaces {
        let d = system.container.mirrored_difference(&x0.q1, &x0.q2, s.mirror).norm();
        if d < 2.0 * params.r - slack {
            return Err(Error::InvalidState(format!("balls overlap a cylinder (distance {d}, mirror {:?})", s.mirror)));
        }
    }
    system.simulate(params, x0, 0.0, stop)
}

/// A standard-model Liouville sample that also keeps clear of the
/// antipodal cylinder, so it is a valid doubled-torus start.
pub fn sample_pair_state(params: &ModelParams, seed: u64) -> Result<PhasePoint> {
    require_full_box(params)?;
    let system = doubled_torus_system(params);
    let mut rng = rng_for(seed, 0x5eed);
    loop {
        let x = sample_liouville_with(params, &mut rng)?;
        let d = system.container.mirrored_difference(&x.q1, &x.q2, AxisSet::first(params.nu)).norm();
        if d >= 2.0 * params.r {
            return Ok(x);
        }
    }
}

/// A `dim`-dimensional Sinai billiard: a point on the unit torus among
/// spheres of radius `radius` centred at the half-lattice.
///
/// Collisions are found by walking the Voronoi cells of the half-lattice
/// along the ray; each scatterer lies inside its own cell, so the first
/// hit found is the earliest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinaiBilliard {
    pub dim: usize,
    pub radius: f64,
    pub tol: ToleranceSet,
}

/// A predicted scatterer hit.
#[derive(Clone, Debug, PartialEq)]
pub struct SinaiHit {
    /// Time after the query point.
    pub time: f64,
    /// Centre of the scatterer, unwrapped relative to the query point.
    pub center: Vector,
}

impl SinaiBilliard {
    pub fn new(params: &ModelParams) -> SinaiBilliard {
        SinaiBilliard { dim: params.nu, radius: scatterer_radius(params), tol: params.tol }
    }

    /// Earliest hit within `horizon` of the particle at `p` with velocity `u`.
    pub fn next_hit(&self, p: &Vector, u: &Vector, horizon: f64) -> Option<SinaiHit> {
        let a = u.norm_squared();
        if a == 0.0 {
            return None;
        }
        let mut cell: Vec<f64> = p.iter().map(|c| (c / CELL).round()).collect();
        let mut exit: Vec<f64> = (0..self.dim)
            .map(|j| {
                if u[j] > 0.0 {
                    ((cell[j] + 0.5) * CELL - p[j]) / u[j]
                } else if u[j] < 0.0 {
                    ((cell[j] - 0.5) * CELL - p[j]) / u[j]
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        loop {
            let center = Vector::from_iterator(self.dim, cell.iter().map(|c| c * CELL));
            let d = p - &center;
            let b = d.dot(u);
            if b < 0.0 {
                let c = d.norm_squared() - self.radius * self.radius;
                let disc = b * b - a * c;
                if disc >= 0.0 {
                    let t = (c / (-b + disc.sqrt())).max(0.0);
                    return (t <= horizon).then_some(SinaiHit { time: t, center });
                }
            }
            let (j, t_next) = exit
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (j, &t)| if t < best.1 { (j, t) } else { best });
            if t_next > horizon {
                return None;
            }
            cell[j] += u[j].signum();
            exit[j] += CELL / u[j].abs();
        }
    }

    /// Reflect `u` at the scatterer centred at `center`, the particle
    /// being at `p`. Returns the new velocity and the outward unit normal.
    pub fn reflect(&self, p: &Vector, center: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        let d = p - center;
        let n = &d / d.norm();
        let c = u.dot(&n);
        if c.abs() < self.tol.graze {
            return Err(Error::GrazingImpact { time: f64::NAN, normal_speed: c });
        }
        Ok((u - &n * (2.0 * c), n))
    }
}

/// One scatterer hit of a subsystem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinaiEvent {
    pub time: f64,
    /// Contact point on the unit torus.
    pub position: Vector,
    /// Scatterer centre on the unit torus.
    pub center: Vector,
    pub u_pre: Vector,
    pub u_post: Vector,
    pub normal: Vector,
}

/// A finished subsystem run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinaiRun {
    pub t_start: f64,
    pub initial: (Vector, Vector),
    pub events: Vec<SinaiEvent>,
    pub t_end: f64,
    pub final_state: (Vector, Vector),
}

impl SinaiRun {
    /// Largest deviation of `|u|^2 / 2` from its initial value.
    pub fn energy_drift(&self) -> f64 {
        let e0 = 0.5 * self.initial.1.norm_squared();
        self.events.iter().map(|e| (0.5 * e.u_post.norm_squared() - e0).abs()).fold(0.0, f64::max)
    }
}

/// Incremental integrator for one subsystem; free flight is always taken
/// from the last event.
struct Cursor {
    billiard: SinaiBilliard,
    anchor: (Vector, Vector),
    t_anchor: f64,
    pending: Option<SinaiHit>,
    searched_to: f64,
    events: Vec<SinaiEvent>,
}

impl Cursor {
    fn new(billiard: SinaiBilliard, p: &Vector, u: &Vector, t0: f64) -> Cursor {
        Cursor {
            billiard,
            anchor: (wrap_unit(p.clone()), u.clone()),
            t_anchor: t0,
            pending: None,
            searched_to: t0,
            events: Vec::new(),
        }
    }

    /// Absolute time of the next hit if it happens by `t_limit`.
    fn peek(&mut self, t_limit: f64) -> Option<f64> {
        if self.pending.is_none() && t_limit > self.searched_to {
            self.pending = self.billiard.next_hit(&self.anchor.0, &self.anchor.1, t_limit - self.t_anchor);
            self.searched_to = t_limit;
        }
        self.pending.as_ref().map(|h| self.t_anchor + h.time).filter(|&t| t <= t_limit)
    }

    fn commit(&mut self) -> Result<()> {
        let hit = self.pending.take().expect("commit after a successful peek");
        let (p, u) = &self.anchor;
        let contact = p + u * hit.time;
        let time = self.t_anchor + hit.time;
        let (u_post, normal) = self.billiard.reflect(&contact, &hit.center, u).map_err(|e| match e {
            Error::GrazingImpact { normal_speed, .. } => Error::GrazingImpact { time, normal_speed },
            other => other,
        })?;
        let position = wrap_unit(contact);
        self.events.push(SinaiEvent {
            time,
            position: position.clone(),
            center: wrap_unit(hit.center),
            u_pre: u.clone(),
            u_post: u_post.clone(),
            normal,
        });
        self.anchor = (position, u_post);
        self.t_anchor = time;
        self.searched_to = time;
        Ok(())
    }

    fn state_at(&self, t: f64) -> (Vector, Vector) {
        let (p, u) = &self.anchor;
        (wrap_unit(p + u * (t - self.t_anchor)), u.clone())
    }

    fn finish(self, t0: f64, initial: (Vector, Vector), t_end: f64) -> SinaiRun {
        let final_state = self.state_at(t_end);
        SinaiRun { t_start: t0, initial, events: self.events, t_end, final_state }
    }
}

/// Both subsystems of a product run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductRun {
    pub radius: f64,
    pub initial: XYState,
    pub x: SinaiRun,
    pub y: SinaiRun,
    pub t_end: f64,
    pub final_state: XYState,
}

/// Which subsystem an event belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subsystem {
    X,
    Y,
}

impl Subsystem {
    pub fn label(self) -> &'static str {
        match self {
            Subsystem::X => "x",
            Subsystem::Y => "y",
        }
    }
}

impl ProductRun {
    /// Both event logs merged by time, `x` first on ties.
    pub fn merged(&self) -> Vec<(Subsystem, &SinaiEvent)> {
        let mut out: Vec<(Subsystem, &SinaiEvent)> = self
            .x
            .events
            .iter()
            .map(|e| (Subsystem::X, e))
            .chain(self.y.events.iter().map(|e| (Subsystem::Y, e)))
            .collect();
        out.sort_by(|a, b| a.1.time.total_cmp(&b.1.time).then((a.0 as u8).cmp(&(b.0 as u8))));
        out
    }
}

/// Run the two Sinai billiards from `z0` with scatterer radius `radius`.
///
/// An event-count stop counts the events of both subsystems together and
/// ends the run at the last counted event.
pub fn simulate_product(z0: &XYState, radius: f64, stop: &StopCondition, tol: ToleranceSet) -> Result<ProductRun> {
    stop.check()?;
    if stop.max_ball_collisions.is_some() {
        return Err(Error::InvalidParams("product runs stop on events or time".into()));
    }
    let violations = xy_violations(z0, radius, crate::dynamics::PRECONDITION_SLACK);
    if !violations.is_empty() {
        return Err(Error::InvalidState(violations.join("; ")));
    }
    let billiard = SinaiBilliard { dim: z0.dim(), radius, tol };
    let mut cx = Cursor::new(billiard, &z0.x, &z0.xdot, 0.0);
    let mut cy = Cursor::new(billiard, &z0.y, &z0.ydot, 0.0);
    let t_stop = stop.t_max.unwrap_or(f64::INFINITY);
    let mut count = 0usize;
    let mut t = 0.0;
    let mut window: f64 = 1.0;
    let mut t_limit = window.min(t_stop);
    loop {
        if stop.max_events.is_some_and(|n| count >= n) {
            break;
        }
        let next = match (cx.peek(t_limit), cy.peek(t_limit)) {
            (Some(a), Some(b)) => Some(if a <= b { (Subsystem::X, a) } else { (Subsystem::Y, b) }),
            (Some(a), None) => Some((Subsystem::X, a)),
            (None, Some(b)) => Some((Subsystem::Y, b)),
            (None, None) => None,
        };
        match next {
            Some((which, time)) => {
                match which {
                    Subsystem::X => cx.commit()?,
                    Subsystem::Y => cy.commit()?,
                }
                count += 1;
                t = time;
                window = 1.0;
                t_limit = (t + window).min(t_stop);
            }
            None => {
                if t_limit >= t_stop {
                    t = t_stop;
                    break;
                }
                if t_limit - t > IDLE_LIMIT {
                    return Err(Error::InvalidState(format!("no scatterer reached within {IDLE_LIMIT} time units")));
                }
                window *= 2.0;
                t_limit = (t + window).min(t_stop);
            }
        }
    }
    let t_end = t;
    let (xf, xdf) = cx.state_at(t_end);
    let (yf, ydf) = cy.state_at(t_end);
    let final_state = XYState { x: xf, y: yf, xdot: xdf, ydot: ydf };
    let x = cx.finish(0.0, (z0.x.clone(), z0.xdot.clone()), t_end);
    let y = cy.finish(0.0, (z0.y.clone(), z0.ydot.clone()), t_end);
    Ok(ProductRun { radius, initial: z0.clone(), x, y, t_end, final_state })
}

/// How the factorized side of the comparison is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProductMode {
    /// One product run from the mapped initial data, compared with the
    /// whole pair stream.
    Independent,
    /// Before each pair event, map the current pair state and predict only
    /// the next event with the Sinai solver.
    Lockstep,
}

/// Outcome of comparing pair and product event streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamComparison {
    pub mode: ProductMode,
    pub compared: usize,
    /// Length of the agreeing prefix.
    pub agreed: usize,
    /// Largest time difference over the agreeing prefix.
    pub max_time_error: f64,
    pub mismatch: Option<(usize, String)>,
    /// Largest drift of `E1` and `E2` on the factorized side.
    pub e1_drift: f64,
    pub e2_drift: f64,
    /// `|E1 + E2 - (|v1|^2 + |v2|^2) / 16|` at the start.
    pub energy_split_error: f64,
}

impl StreamComparison {
    pub fn passed(&self) -> bool {
        self.mismatch.is_none()
    }
}

fn pair_subsystem(kind: EventKind) -> Option<Subsystem> {
    match kind {
        EventKind::BallBall => Some(Subsystem::Y),
        EventKind::Antipodal => Some(Subsystem::X),
        _ => None,
    }
}

fn energy_split_error(x: &PhasePoint) -> f64 {
    let z = pair_to_xy(x);
    (z.e1() + z.e2() - (x.v1.norm_squared() + x.v2.norm_squared()) / 16.0).abs()
}

/// Compare a pair segment with a product run event by event.
pub fn compare_streams(pair: &TrajectorySegment, product: &ProductRun) -> StreamComparison {
    let merged = product.merged();
    let compared = pair.events.len();
    let mut agreed = 0;
    let mut max_time_error = 0.0f64;
    let mut mismatch = None;
    for (i, ev) in pair.events.iter().enumerate() {
        let Some((which, sev)) = merged.get(i) else {
            mismatch = Some((i, format!("product stream ended after {} events", merged.len())));
            break;
        };
        let expected = pair_subsystem(ev.kind);
        let dt = (ev.time - sev.time).abs();
        if expected != Some(*which) || dt.is_nan() || dt > STREAM_TIME_TOLERANCE {
            mismatch = Some((
                i,
                format!("pair {:?} at t = {} vs {} scatterer at t = {}", ev.kind, ev.time, which.label(), sev.time),
            ));
            break;
        }
        agreed += 1;
        max_time_error = max_time_error.max(dt);
    }
    StreamComparison {
        mode: ProductMode::Independent,
        compared,
        agreed,
        max_time_error,
        mismatch,
        e1_drift: product.x.energy_drift(),
        e2_drift: product.y.energy_drift(),
        energy_split_error: energy_split_error(&pair.initial),
    }
}

/// Event-by-event comparison that re-maps the pair state before every
/// prediction, so round-off does not accumulate across events.
pub fn lockstep_comparison(pair: &TrajectorySegment, params: &ModelParams) -> StreamComparison {
    let billiard = SinaiBilliard::new(params);
    let mut agreed = 0;
    let mut max_time_error = 0.0f64;
    let mut mismatch = None;
    let (mut e1_drift, mut e2_drift) = (0.0f64, 0.0f64);
    let z0 = pair_to_xy(&pair.initial);
    let mut state = pair.initial.clone();
    let mut t = pair.t_start;
    for (i, ev) in pair.events.iter().enumerate() {
        let z = pair_to_xy(&state);
        e1_drift = e1_drift.max((z.e1() - z0.e1()).abs());
        e2_drift = e2_drift.max((z.e2() - z0.e2()).abs());
        let horizon = ev.time - t + 1.0;
        let hx = billiard.next_hit(&z.x, &z.xdot, horizon).map(|h| (Subsystem::X, t + h.time));
        let hy = billiard.next_hit(&z.y, &z.ydot, horizon).map(|h| (Subsystem::Y, t + h.time));
        let predicted = match (hx, hy) {
            (Some(a), Some(b)) => Some(if a.1 <= b.1 { a } else { b }),
            (a, b) => a.or(b),
        };
        let expected = pair_subsystem(ev.kind);
        match predicted {
            Some((which, time)) if Some(which) == expected && (time - ev.time).abs() <= STREAM_TIME_TOLERANCE => {
                agreed += 1;
                max_time_error = max_time_error.max((time - ev.time).abs());
            }
            other => {
                mismatch = Some((i, format!("pair {:?} at t = {}, predicted {:?}", ev.kind, ev.time, other)));
                break;
            }
        }
        state = ev.post_state();
        t = ev.time;
    }
    StreamComparison {
        mode: ProductMode::Lockstep,
        compared: pair.events.len(),
        agreed,
        max_time_error,
        mismatch,
        e1_drift,
        e2_drift,
        energy_split_error: energy_split_error(&pair.initial),
    }
}

/// The pair run, the product run (independent mode only) and their
/// comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductCheck {
    pub pair: TrajectorySegment,
    pub product: Option<ProductRun>,
    pub comparison: StreamComparison,
}

/// Run both simulations for `n_events` pair events and compare them,
/// reporting rather than failing on a mismatch.
pub fn product_decomposition_report(
    x0: &PhasePoint,
    n_events: usize,
    params: &ModelParams,
    mode: ProductMode,
) -> Result<ProductCheck> {
    let pair = simulate_pair(x0, &StopCondition::events(n_events), params)?;
    match mode {
        ProductMode::Independent => {
            let z0 = pair_to_xy(&pair.initial);
            let product =
                simulate_product(&z0, scatterer_radius(params), &StopCondition::events(pair.events.len()), params.tol)?;
            let comparison = compare_streams(&pair, &product);
            Ok(ProductCheck { pair, product: Some(product), comparison })
        }
        ProductMode::Lockstep => {
            let comparison = lockstep_comparison(&pair, params);
            Ok(ProductCheck { pair, product: None, comparison })
        }
    }
}

/// [`product_decomposition_report`], with a disagreement turned into
/// [`Error::StreamMismatch`].
pub fn check_product_decomposition(
    x0: &PhasePoint,
    n_events: usize,
    params: &ModelParams,
    mode: ProductMode,
) -> Result<ProductCheck> {
    let check = product_decomposition_report(x0, n_events, params, mode)?;
    if let Some((index, detail)) = &check.comparison.mismatch {
        return Err(Error::StreamMismatch { index: *index, detail: detail.clone() });
    }
    Ok(check)
}

/// JSON Lines log of one subsystem, in the event schema of the pair logs:
/// `q1` is the particle, `q2` the scatterer centre, `v1` its velocity.
pub fn write_subsystem_log(
    run: &SinaiRun,
    which: Subsystem,
    radius: f64,
    params: &ModelParams,
    seed: Option<u64>,
) -> String {
    let zero = Vector::zeros(params.nu);
    let point =
        |(p, u): &(Vector, Vector)| PhasePoint { q1: p.clone(), q2: zero.clone(), v1: u.clone(), v2: zero.clone() };
    let header = LogHeader {
        params: *params,
        seed,
        container: format!("T^{} sinai scatterer_radius={} centres=G", params.nu, radius),
        subsystem: Some(which.label().to_string()),
        t_start: run.t_start,
        t_end: run.t_end,
        initial: point(&run.initial),
        final_state: point(&run.final_state),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for e in &run.events {
        let ev = CollisionEvent {
            time: e.time,
            kind: EventKind::Scatterer,
            q1: e.position.clone(),
            q2: e.center.clone(),
            v1_pre: e.u_pre.clone(),
            v2_pre: zero.clone(),
            v1_post: e.u_post.clone(),
            v2_post: zero.clone(),
            normal: Some(e.normal.clone()),
        };
        out.push_str(&serde_json::to_string(&EventRecord::from_event(&ev)).expect("event serializes"));
        out.push('\n');
    }
    out
}
