//! The reduced symbolic collision sequence: ball-ball collision times
//! interleaved with the parity sets of wall bounces between them.

use serde::{Deserialize, Serialize};

use crate::dynamics::{EventKind, TrajectorySegment};
use crate::error::{Error, Result};
use crate::geometry::{reflect, AxisSet, Vector};
use crate::model::ModelParams;

/// Agreement required when rebuilding velocities from parity sets.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-10;

/// Wall-bounce counts `r(ball, window, axis)`.
///
/// `leading` covers the stretch from the segment start to the first ball
/// collision; `interior[i - 1]` covers the window between ball collisions
/// `i - 1` and `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallTally {
    pub k: usize,
    pub leading: Option<[Vec<u32>; 2]>,
    pub interior: Vec<[Vec<u32>; 2]>,
}

/// Odd-parity axis sets per ball and their symmetric difference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZSets {
    pub leading: Option<[AxisSet; 2]>,
    pub per_ball: Vec<[AxisSet; 2]>,
    pub z: Vec<AxisSet>,
}

/// The sequence `(t_0, Z_1, t_1, ..., Z_n, t_n)` plus the leading set `Z_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicSequence {
    pub sigma_times: Vec<f64>,
    /// `Z_1 .. Z_n`.
    pub z: Vec<AxisSet>,
    pub z_per_ball: Vec<[AxisSet; 2]>,
    pub z0: Option<AxisSet>,
    pub z0_per_ball: Option<[AxisSet; 2]>,
}

impl SymbolicSequence {
    /// Number of interior windows `n`.
    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// Union of `Z_1 .. Z_n`.
    pub fn union(&self) -> AxisSet {
        self.z.iter().fold(AxisSet::EMPTY, |acc, z| acc.union(*z))
    }

    /// Union including the leading set `Z_0`.
    pub fn union_with_leading(&self) -> AxisSet {
        self.union().union(self.z0.unwrap_or(AxisSet::EMPTY))
    }

    pub fn record(&self, rich: bool) -> SigmaRecord {
        SigmaRecord {
            t_sigma: self.sigma_times.clone(),
            z: self.z.iter().map(|s| s.to_labels()).collect(),
            z0: self.z0.map(|s| s.to_labels()),
            rich,
        }
    }
}

/// Serialized form of a symbolic sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaRecord {
    pub t_sigma: Vec<f64>,
    #[serde(rename = "Z")]
    pub z: Vec<Vec<usize>>,
    #[serde(rename = "Z0")]
    pub z0: Option<Vec<usize>>,
    pub rich: bool,
}

/// Reject segments whose start or end lies within the event tolerance of
/// an event.
pub fn check_endpoints(seg: &TrajectorySegment) -> Result<()> {
    let tol = seg.params.tol.event;
    if let Some(first) = seg.events.first() {
        let gap = first.time - seg.t_start;
        if gap < tol {
            return Err(Error::EndpointAtCollision { endpoint: seg.t_start, gap });
        }
    }
    if let Some(last) = seg.events.last() {
        let gap = seg.t_end - last.time;
        if gap < tol {
            return Err(Error::EndpointAtCollision { endpoint: seg.t_end, gap });
        }
    }
    Ok(())
}

/// Per-window wall-bounce counts.
pub fn wall_parity_counts(seg: &TrajectorySegment) -> Result<WallTally> {
    let balls = seg.ball_event_indices();
    if balls.is_empty() {
        return Err(Error::NoBallCollision);
    }
    check_endpoints(seg)?;
    let k = seg.params.k;
    let count = |from: usize, to: usize| -> [Vec<u32>; 2] {
        let mut c = [vec![0u32; k], vec![0u32; k]];
        for ev in &seg.events[from..to] {
            if let EventKind::Wall { ball, axis, .. } = ev.kind {
                c[ball][axis] += 1;
            }
        }
        c
    };
    let leading = Some(count(0, balls[0]));
    let interior = balls.windows(2).map(|w| count(w[0] + 1, w[1])).collect();
    Ok(WallTally { k, leading, interior })
}

fn odd_axes(counts: &[u32]) -> AxisSet {
    AxisSet::from_axes((0..counts.len()).filter(|&j| counts[j] % 2 == 1))
}

fn parity_pair(c: &[Vec<u32>; 2]) -> [AxisSet; 2] {
    [odd_axes(&c[0]), odd_axes(&c[1])]
}

/// Odd-parity sets `Z_i(1)`, `Z_i(2)` and `Z_i = Z_i(1) xor Z_i(2)`.
pub fn z_sets(tally: &WallTally) -> ZSets {
    let per_ball: Vec<[AxisSet; 2]> = tally.interior.iter().map(parity_pair).collect();
    let z = per_ball.iter().map(|[a, b]| a.symmetric_difference(*b)).collect();
    ZSets { leading: tally.leading.as_ref().map(parity_pair), per_ball, z }
}

fn check_reconstruction(window: usize, before: [&Vector; 2], after: [&Vector; 2], sets: [AxisSet; 2]) -> Result<()> {
    for ball in 0..2 {
        let predicted = reflect(before[ball], sets[ball]);
        let error = (&predicted - after[ball]).amax();
        if error.is_nan() || error > RECONSTRUCTION_TOLERANCE {
            return Err(Error::Eq33Mismatch { window, ball: ball + 1, error });
        }
    }
    Ok(())
}

/// Assemble the symbolic sequence of `seg` and verify that the velocity
/// entering each ball collision is the parity reflection of the velocity
/// leaving the previous one.
pub fn symbolic_sequence(seg: &TrajectorySegment) -> Result<SymbolicSequence> {
    if !seg.branch_warnings.is_empty() {
        return Err(Error::BranchWarningsPresent(seg.branch_warnings.len()));
    }
    let tally = wall_parity_counts(seg)?;
    let sets = z_sets(&tally);
    let balls = seg.ball_event_indices();
    for (w, pair) in balls.windows(2).enumerate() {
        let (prev, next) = (&seg.events[pair[0]], &seg.events[pair[1]]);
        check_reconstruction(w + 1, [&prev.v1_post, &prev.v2_post], [&next.v1_pre, &next.v2_pre], sets.per_ball[w])?;
    }
    if let Some(lead) = sets.leading {
        let first = &seg.events[balls[0]];
        check_reconstruction(0, [&seg.initial.v1, &seg.initial.v2], [&first.v1_pre, &first.v2_pre], lead)?;
    }
    Ok(SymbolicSequence {
        sigma_times: balls.iter().map(|&i| seg.events[i].time).collect(),
        z: sets.z,
        z_per_ball: sets.per_ball,
        z0: sets.leading.map(|[a, b]| a.symmetric_difference(b)),
        z0_per_ball: sets.leading,
    })
}

/// Outcome of the combinatorial richness test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Richness {
    pub rich: bool,
    /// Set when `k = 0`, where richness is not defined.
    pub degenerate: bool,
    /// For each box axis, the windows `i >= 1` whose `Z_i` contains it.
    pub coverage: Vec<Vec<usize>>,
    /// Some window with `0 < |Z_i| < nu`.
    pub witness_index: Option<usize>,
}

/// Richness: the `Z_i` cover every box axis and some `Z_i` is a proper,
/// nonempty subset of the axes.
pub fn is_rich(sigma: &SymbolicSequence, params: &ModelParams) -> Richness {
    let (nu, k) = (params.nu, params.k);
    if k == 0 {
        return Richness { rich: false, degenerate: true, coverage: Vec::new(), witness_index: None };
    }
    let coverage: Vec<Vec<usize>> =
        (0..k).map(|j| (0..sigma.n()).filter(|&i| sigma.z[i].contains(j)).map(|i| i + 1).collect()).collect();
    let covered = coverage.iter().all(|c| !c.is_empty());
    let witness_index = sigma.z.iter().position(|z| !z.is_empty() && z.len() < nu).map(|i| i + 1);
    if k < nu && covered {
        // every nonempty Z_i has at most k < nu axes, so covering already
        // produces a witness
        assert!(witness_index.is_some(), "covering sets without a proper witness at k < nu");
    }
    Richness { rich: covered && witness_index.is_some(), degenerate: false, coverage, witness_index }
}
