//! Rotation algebra, camera-space orbit semantics and exact polycube
//! rotation equivalence.
//!
//! The camera sits on the +Z axis looking toward the origin with +Y up.
//! Object orientation is a unit quaternion mapping object coordinates into
//! that fixed camera frame. Camera-space commands pre-multiply the pose, so
//! the rotation axes never move with the object.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Direction, Turn};

/// Orientation tolerance used for pose comparisons (`1 - |dot| <= tol`).
pub const POSE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("polycube has no cells")]
    Empty,
    #[error("polycube is not face-connected ({components} components)")]
    Disconnected { components: usize },
    #[error("bad polycube text on line {line}: {reason}")]
    BadText { line: usize, reason: String },
}

/// Integer grid index of a unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn neighbors(self) -> [VoxelCoord; 6] {
        let VoxelCoord { x, y, z } = self;
        [
            VoxelCoord::new(x - 1, y, z),
            VoxelCoord::new(x + 1, y, z),
            VoxelCoord::new(x, y - 1, z),
            VoxelCoord::new(x, y + 1, z),
            VoxelCoord::new(x, y, z - 1),
            VoxelCoord::new(x, y, z + 1),
        ]
    }

    fn to_array(self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }
}

impl fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.z)
    }
}

/// A face-connected set of unit cubes.
///
/// Construction through [`Polycube::new`] always normalizes, so two values
/// compare equal exactly when they are translates of each other.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<VoxelCoord>", into = "Vec<VoxelCoord>")]
pub struct Polycube {
    cells: BTreeSet<VoxelCoord>,
}

impl Polycube {
    pub fn new(cells: impl IntoIterator<Item = VoxelCoord>) -> Result<Self, GeometryError> {
        let cells: BTreeSet<VoxelCoord> = cells.into_iter().collect();
        if cells.is_empty() {
            return Err(GeometryError::Empty);
        }
        let components = count_components(&cells);
        if components != 1 {
            return Err(GeometryError::Disconnected { components });
        }
        Ok(Self::normalized_from(cells))
    }

    /// Convenience for literals: `Polycube::from_triples(&[(0,0,0),(1,0,0)])`.
    pub fn from_triples(cells: &[(i32, i32, i32)]) -> Result<Self, GeometryError> {
        Self::new(cells.iter().map(|&(x, y, z)| VoxelCoord::new(x, y, z)))
    }

    fn normalized_from(cells: BTreeSet<VoxelCoord>) -> Self {
        let (min, _) = bounds(&cells);
        let cells = cells
            .into_iter()
            .map(|c| VoxelCoord::new(c.x - min.x, c.y - min.y, c.z - min.z))
            .collect();
        Self { cells }
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = VoxelCoord> + '_ {
        self.cells.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, c: VoxelCoord) -> bool {
        self.cells.contains(&c)
    }

    /// Bounding-box extent along x, y and z.
    pub fn dims(&self) -> [i32; 3] {
        let (min, max) = bounds(&self.cells);
        [max.x - min.x + 1, max.y - min.y + 1, max.z - min.z + 1]
    }

    pub fn rotated(&self, r: &GridRotation) -> Polycube {
        Self::normalized_from(self.cells.iter().map(|&c| r.apply(c)).collect())
    }

    /// Reflection across an X = const plane.
    pub fn mirror(&self) -> Polycube {
        Self::normalized_from(
            self.cells
                .iter()
                .map(|c| VoxelCoord::new(-c.x, c.y, c.z))
                .collect(),
        )
    }

    pub fn is_chiral(&self) -> bool {
        !rotation_equivalent(self, &self.mirror())
    }

    /// Lexicographically smallest normalized cell list over the 24 grid
    /// rotations; equal for exactly the rotation-equivalent polycubes.
    pub fn canonical_form(&self) -> Polycube {
        canonical_orientations()
            .iter()
            .map(|r| self.rotated(r))
            .min()
            .expect("group is non-empty")
    }

    /// Grid rotations mapping the polycube onto itself.
    pub fn symmetries(&self) -> Vec<GridRotation> {
        canonical_orientations()
            .iter()
            .filter(|r| &self.rotated(r) == self)
            .copied()
            .collect()
    }

    /// Canonical text form: one `x,y,z` line per cell in lexicographic order.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() * 6);
        for c in &self.cells {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GeometryError> {
        let mut cells = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(GeometryError::BadText {
                    line: i + 1,
                    reason: format!("expected 3 fields, got {}", parts.len()),
                });
            }
            let mut xyz = [0i32; 3];
            for (slot, part) in xyz.iter_mut().zip(&parts) {
                *slot = part.parse().map_err(|_| GeometryError::BadText {
                    line: i + 1,
                    reason: format!("not an integer: {part:?}"),
                })?;
            }
            cells.push(VoxelCoord::new(xyz[0], xyz[1], xyz[2]));
        }
        Self::new(cells)
    }
}

impl TryFrom<Vec<VoxelCoord>> for Polycube {
    type Error = GeometryError;

    fn try_from(cells: Vec<VoxelCoord>) -> Result<Self, Self::Error> {
        Polycube::new(cells)
    }
}

impl From<Polycube> for Vec<VoxelCoord> {
    fn from(p: Polycube) -> Self {
        p.cells.into_iter().collect()
    }
}

fn bounds(cells: &BTreeSet<VoxelCoord>) -> (VoxelCoord, VoxelCoord) {
    let mut min = VoxelCoord::new(i32::MAX, i32::MAX, i32::MAX);
    let mut max = VoxelCoord::new(i32::MIN, i32::MIN, i32::MIN);
    for c in cells {
        min = VoxelCoord::new(min.x.min(c.x), min.y.min(c.y), min.z.min(c.z));
        max = VoxelCoord::new(max.x.max(c.x), max.y.max(c.y), max.z.max(c.z));
    }
    (min, max)
}

pub(crate) fn count_components(cells: &BTreeSet<VoxelCoord>) -> usize {
    let mut seen = BTreeSet::new();
    let mut components = 0;
    for &start in cells {
        if !seen.insert(start) {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for n in c.neighbors() {
                if cells.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
    }
    components
}

pub fn normalize_polycube(p: &Polycube) -> Polycube {
    // Every Polycube is stored normalized; this is the identity on valid values.
    Polycube::normalized_from(p.cells.clone())
}

pub fn rotation_equivalent(a: &Polycube, b: &Polycube) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut sorted_a = a.dims();
    let mut sorted_b = b.dims();
    sorted_a.sort_unstable();
    sorted_b.sort_unstable();
    if sorted_a != sorted_b {
        return false;
    }
    canonical_orientations().iter().any(|r| &a.rotated(r) == b)
}

/// A proper rotation of the integer grid: a signed permutation matrix with
/// determinant +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridRotation([[i32; 3]; 3]);

impl GridRotation {
    pub const IDENTITY: GridRotation = GridRotation([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
    /// Quarter turns (right-hand rule) about +X, +Y, +Z.
    pub const QUARTER_X: GridRotation = GridRotation([[1, 0, 0], [0, 0, -1], [0, 1, 0]]);
    pub const QUARTER_Y: GridRotation = GridRotation([[0, 0, 1], [0, 1, 0], [-1, 0, 0]]);
    pub const QUARTER_Z: GridRotation = GridRotation([[0, -1, 0], [1, 0, 0], [0, 0, 1]]);

    pub fn matrix(&self) -> [[i32; 3]; 3] {
        self.0
    }

    pub fn apply(&self, c: VoxelCoord) -> VoxelCoord {
        let v = c.to_array();
        let m = &self.0;
        let row = |i: usize| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
        VoxelCoord::new(row(0), row(1), row(2))
    }

    /// `self · other`: apply `other` first.
    pub fn compose(&self, other: &GridRotation) -> GridRotation {
        let mut out = [[0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        GridRotation(out)
    }

    pub fn inverse(&self) -> GridRotation {
        let m = &self.0;
        GridRotation([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    /// Smallest k >= 1 with self^k = identity.
    pub fn order(&self) -> usize {
        let mut acc = *self;
        let mut k = 1;
        while acc != Self::IDENTITY {
            acc = acc.compose(self);
            k += 1;
        }
        k
    }

    pub fn to_pose(&self) -> Pose {
        let m = Matrix3::from_fn(|i, j| f64::from(self.0[i][j]));
        let rot = Rotation3::from_matrix_unchecked(m);
        Pose(UnitQuaternion::from_rotation_matrix(&rot))
    }
}

/// The 24 proper rotations of the cube grid, in breadth-first order from
/// the identity over quarter turns about X, Y and Z.
pub fn canonical_orientations() -> &'static [GridRotation] {
    static GROUP: OnceLock<Vec<GridRotation>> = OnceLock::new();
    GROUP.get_or_init(|| {
        let generators = [
            GridRotation::QUARTER_X,
            GridRotation::QUARTER_Y,
            GridRotation::QUARTER_Z,
        ];
        let mut found = vec![GridRotation::IDENTITY];
        let mut queue = VecDeque::from([GridRotation::IDENTITY]);
        while let Some(r) = queue.pop_front() {
            for g in &generators {
                let next = g.compose(&r);
                if !found.contains(&next) {
                    found.push(next);
                    queue.push_back(next);
                }
            }
        }
        found
    })
}

/// Orientation of an object relative to the fixed camera rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "QuatRepr", into = "QuatRepr")]
pub struct Pose(UnitQuaternion<f64>);

#[derive(Serialize, Deserialize)]
struct QuatRepr {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl From<QuatRepr> for Pose {
    fn from(q: QuatRepr) -> Self {
        let raw = Quaternion::new(q.w, q.x, q.y, q.z);
        // Keep stored unit quaternions bit-exact so poses round-trip.
        if (raw.norm() - 1.0).abs() <= 1e-12 {
            Pose(UnitQuaternion::new_unchecked(raw))
        } else {
            Pose::from_wxyz(q.w, q.x, q.y, q.z)
        }
    }
}

impl From<Pose> for QuatRepr {
    fn from(p: Pose) -> Self {
        let [w, x, y, z] = p.wxyz();
        QuatRepr { w, x, y, z }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose(UnitQuaternion::identity())
    }

    /// Normalizes the given components. A zero quaternion yields identity.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = Quaternion::new(w, x, y, z);
        if q.norm() == 0.0 || !q.norm().is_finite() {
            return Self::identity();
        }
        Pose(UnitQuaternion::from_quaternion(q))
    }

    pub fn from_axis_angle_deg(axis: Axis, angle_deg: f64) -> Self {
        let axis = match axis {
            Axis::X => Vector3::x_axis(),
            Axis::Y => Vector3::y_axis(),
            Axis::Z => Vector3::z_axis(),
        };
        Pose(UnitQuaternion::from_axis_angle(&axis, angle_deg.to_radians()))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// `self · other`, renormalized.
    pub fn then_after(&self, other: &Pose) -> Pose {
        Pose(UnitQuaternion::new_normalize(
            self.0.into_inner() * other.0.into_inner(),
        ))
    }

    pub fn inverse(&self) -> Pose {
        Pose(self.0.inverse())
    }

    /// `1 - |<p, q>|`; zero for identical orientations, sign-insensitive.
    pub fn distance(&self, other: &Pose) -> f64 {
        let d = self.0.quaternion().dot(other.0.quaternion()).abs();
        (1.0 - d).max(0.0)
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.distance(other) <= tol
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let m = self.0.to_rotation_matrix();
        let m = m.matrix();
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn rotate_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.0 * Vector3::new(v[0], v[1], v[2]);
        [r.x, r.y, r.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// The camera-frame rotation a turn command stands for.
///
/// `right` is a positive turn about +Y, `down` positive about +X and `ccw`
/// positive about +Z; their partners negate the angle.
pub fn camera_rotation(turn: &Turn) -> Pose {
    let (axis, sign) = match turn.direction {
        Direction::Right => (Axis::Y, 1.0),
        Direction::Left => (Axis::Y, -1.0),
        Direction::Down => (Axis::X, 1.0),
        Direction::Up => (Axis::X, -1.0),
        Direction::Ccw => (Axis::Z, 1.0),
        Direction::Cw => (Axis::Z, -1.0),
    };
    Pose::from_axis_angle_deg(axis, sign * turn.angle_deg)
}

pub fn apply_camera_rotation(pose: &Pose, turn: &Turn) -> Pose {
    camera_rotation(turn).then_after(pose)
}

/// Pitch (X), yaw (Y) and roll (Z) in degrees, applied extrinsically in
/// that order: `R = Rz(roll) · Ry(yaw) · Rx(pitch)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAnglesDeg {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl EulerAnglesDeg {
    pub const fn new(pitch: f64, yaw: f64, roll: f64) -> Self {
        Self { pitch, yaw, roll }
    }
}

pub fn pose_from_euler(e: &EulerAnglesDeg) -> Pose {
    let rx = Pose::from_axis_angle_deg(Axis::X, e.pitch);
    let ry = Pose::from_axis_angle_deg(Axis::Y, e.yaw);
    let rz = Pose::from_axis_angle_deg(Axis::Z, e.roll);
    rz.then_after(&ry).then_after(&rx)
}

/// Inverse of [`pose_from_euler`]. When yaw hits ±90° the pitch and roll
/// axes coincide; roll is then pinned to zero and the shared angle is
/// reported as pitch.
pub fn pose_to_euler(p: &Pose) -> EulerAnglesDeg {
    let m = p.rotation_matrix();
    let sin_yaw = (-m[2][0]).clamp(-1.0, 1.0);
    let cos_yaw = (m[0][0] * m[0][0] + m[1][0] * m[1][0]).sqrt();
    if cos_yaw > 1e-9 {
        EulerAnglesDeg {
            pitch: m[2][1].atan2(m[2][2]).to_degrees(),
            yaw: sin_yaw.atan2(cos_yaw).to_degrees(),
            roll: m[1][0].atan2(m[0][0]).to_degrees(),
        }
    } else if sin_yaw > 0.0 {
        EulerAnglesDeg {
            pitch: m[0][1].atan2(m[0][2]).to_degrees(),
            yaw: 90.0,
            roll: 0.0,
        }
    } else {
        EulerAnglesDeg {
            pitch: (-m[0][1]).atan2(-m[0][2]).to_degrees(),
            yaw: -90.0,
            roll: 0.0,
        }
    }
}
