//! Container geometry shared by the base model and the lifted/unfolded
//! containers: axis kinds, minimal-image differences, coordinate
//! reflections and projections.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub type Vector = DVector<f64>;

/// A set of coordinate axes, stored as a bit mask (axis `j` is bit `j`,
/// zero-based). Dimensions above 64 are not supported.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AxisSet(pub u64);

impl AxisSet {
    pub const EMPTY: AxisSet = AxisSet(0);

    /// Axes `0..n`.
    pub fn first(n: usize) -> AxisSet {
        if n >= 64 {
            AxisSet(u64::MAX)
        } else {
            AxisSet((1u64 << n) - 1)
        }
    }

    pub fn single(axis: usize) -> AxisSet {
        AxisSet(1u64 << axis)
    }

    pub fn from_axes<I: IntoIterator<Item = usize>>(axes: I) -> AxisSet {
        AxisSet(axes.into_iter().fold(0, |m, j| m | (1u64 << j)))
    }

    pub fn contains(self, axis: usize) -> bool {
        axis < 64 && self.0 & (1u64 << axis) != 0
    }

    pub fn insert(&mut self, axis: usize) {
        self.0 |= 1u64 << axis;
    }

    pub fn toggle(&mut self, axis: usize) {
        self.0 ^= 1u64 << axis;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: AxisSet) -> AxisSet {
        AxisSet(self.0 | other.0)
    }

    pub fn symmetric_difference(self, other: AxisSet) -> AxisSet {
        AxisSet(self.0 ^ other.0)
    }

    /// Complement within `0..nu`.
    pub fn complement(self, nu: usize) -> AxisSet {
        AxisSet(!self.0 & AxisSet::first(nu).0)
    }

    pub fn is_subset(self, other: AxisSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&j| self.contains(j))
    }

    /// One-based axis labels, as used in serialized output.
    pub fn to_labels(self) -> Vec<usize> {
        self.iter().map(|j| j + 1).collect()
    }

    pub fn from_labels(labels: &[usize]) -> Option<AxisSet> {
        let mut set = AxisSet::EMPTY;
        for &l in labels {
            if l == 0 || l > 64 {
                return None;
            }
            set.insert(l - 1);
        }
        Some(set)
    }
}

impl fmt::Debug for AxisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.to_labels()).finish()
    }
}

impl Serialize for AxisSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_labels().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AxisSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<usize>::deserialize(d)?;
        AxisSet::from_labels(&labels).ok_or_else(|| serde::de::Error::custom("axis label out of range"))
    }
}

/// `R_Z`: negate the coordinates in `set`.
pub fn reflect(v: &Vector, set: AxisSet) -> Vector {
    let mut out = v.clone();
    for j in set.iter().take_while(|&j| j < v.len()) {
        out[j] = -out[j];
    }
    out
}

/// `P_Z`: orthogonal projection onto the coordinates in `set`.
pub fn project(v: &Vector, set: AxisSet) -> Vector {
    Vector::from_fn(v.len(), |j, _| if set.contains(j) { v[j] } else { 0.0 })
}

/// How a single coordinate axis of a container behaves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AxisKind {
    /// Flat walls at 0 and 1; ball centres stay in `[0, 1]`.
    Wall,
    /// Periodic with the given circumference; coordinates live in `[0, L)`.
    Periodic(f64),
}

/// Product container: one [`AxisKind`] per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Container {
    pub axes: Vec<AxisKind>,
}

impl Container {
    /// `[0,1]^k x T^(nu-k)`.
    pub fn standard(nu: usize, k: usize) -> Container {
        let axes = (0..nu).map(|j| if j < k { AxisKind::Wall } else { AxisKind::Periodic(1.0) }).collect();
        Container { axes }
    }

    /// Flat torus with every axis of circumference `l`.
    pub fn torus(nu: usize, l: f64) -> Container {
        Container { axes: vec![AxisKind::Periodic(l); nu] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn wall_axes(&self) -> AxisSet {
        AxisSet::from_axes((0..self.dim()).filter(|&j| self.axes[j] == AxisKind::Wall))
    }

    pub fn periodic_axes(&self) -> AxisSet {
        self.wall_axes().complement(self.dim())
    }

    /// Short human-readable description used in log headers.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .axes
            .iter()
            .map(|a| match a {
                AxisKind::Wall => "[0,1]".to_string(),
                AxisKind::Periodic(l) => format!("R/{l}Z"),
            })
            .collect();
        parts.join(" x ")
    }

    /// Wrap periodic coordinates into `[0, L)`.
    pub fn wrap(&self, q: &mut Vector) {
        for (j, kind) in self.axes.iter().enumerate() {
            if let AxisKind::Periodic(l) = *kind {
                q[j] = wrap_into(q[j], l);
            }
        }
    }

    /// Minimal-image difference `a - b` (periodic axes reduced to
    /// `[-L/2, L/2]`, wall axes verbatim).
    pub fn min_image(&self, a: &Vector, b: &Vector) -> Vector {
        let mut d = a - b;
        for (j, kind) in self.axes.iter().enumerate() {
            if let AxisKind::Periodic(l) = *kind {
                d[j] -= l * (d[j] / l).round();
            }
        }
        d
    }

    pub fn distance(&self, a: &Vector, b: &Vector) -> f64 {
        self.min_image(a, b).norm()
    }

    /// `a - R_S b` reduced to its minimal image; `S` must only contain
    /// periodic axes (reflection about the origin of those circles).
    pub fn mirrored_difference(&self, a: &Vector, b: &Vector, mirror: AxisSet) -> Vector {
        let mut d = Vector::from_fn(a.len(), |j, _| if mirror.contains(j) { a[j] + b[j] } else { a[j] - b[j] });
        for (j, kind) in self.axes.iter().enumerate() {
            if let AxisKind::Periodic(l) = *kind {
                d[j] -= l * (d[j] / l).round();
            }
        }
        d
    }
}

/// `x mod l` in `[0, l)`.
pub fn wrap_into(x: f64, l: f64) -> f64 {
    let y = x.rem_euclid(l);
    // rem_euclid can return l itself for tiny negative x
    if y >= l {
        0.0
    } else {
        y
    }
}

/// Distance on the circle of circumference `l`.
pub fn circle_distance(a: f64, b: f64, l: f64) -> f64 {
    let d = (a - b).rem_euclid(l);
    d.min(l - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_set_algebra() {
        let a = AxisSet::from_axes([0, 2]);
        let b = AxisSet::from_axes([2, 3]);
        assert_eq!(a.symmetric_difference(b), AxisSet::from_axes([0, 3]));
        assert_eq!(a.union(b).len(), 3);
        assert_eq!(a.complement(4), AxisSet::from_axes([1, 3]));
        assert_eq!(a.to_labels(), vec![1, 3]);
        assert_eq!(AxisSet::from_labels(&[1, 3]), Some(a));
        assert_eq!(AxisSet::from_labels(&[0]), None);
    }

    #[test]
    fn reflection_and_projection_split_a_vector() {
        let v = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        let z = AxisSet::from_axes([1]);
        let p = project(&v, z);
        let q = project(&v, z.complement(3));
        assert_eq!(p + q, v.clone());
        // P_Z = (I - R_Z) / 2
        assert_eq!((&v - reflect(&v, z)) / 2.0, project(&v, z));
    }

    #[test]
    fn wrap_handles_edges() {
        assert_eq!(wrap_into(1.0, 1.0), 0.0);
        assert_eq!(wrap_into(-0.25, 1.0), 0.75);
        assert!(wrap_into(-1e-18, 1.0) < 1.0);
        assert!((circle_distance(0.1, 0.9, 1.0) - 0.2).abs() < 1e-15);
    }
}
