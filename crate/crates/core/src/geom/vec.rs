use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or direction in world space, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; zero vectors stay zero.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }

    #[inline]
    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    #[inline]
    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn mul_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn max_element(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    /// Index of the largest component (ties resolve to the lower axis).
    pub fn max_axis(self) -> usize {
        if self.x >= self.y && self.x >= self.z {
            0
        } else if self.y >= self.z {
            1
        } else {
            2
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn axis(i: usize) -> Vec3 {
        match i {
            0 => Vec3::X,
            1 => Vec3::Y,
            _ => Vec3::Z,
        }
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        points
            .into_iter()
            .fold(Aabb::EMPTY, |b, &p| b.grow_point(p))
    }

    #[inline]
    pub fn grow_point(self, p: Vec3) -> Aabb {
        Aabb::new(self.min.min(p), self.max.max(p))
    }

    #[inline]
    pub fn union(self, o: Aabb) -> Aabb {
        Aabb::new(self.min.min(o.min), self.max.max(o.max))
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    #[inline]
    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    #[inline]
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb::new(self.min - Vec3::splat(pad), self.max + Vec3::splat(pad))
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }

    pub fn contains_box(&self, o: &Aabb) -> bool {
        self.contains(o.min) && self.contains(o.max)
    }

    /// Squared distance from `p` to the box (zero inside).
    #[inline]
    pub fn distance_squared(&self, p: Vec3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        dx * dx + dy * dy + dz * dz
    }

    /// Signed gap between two boxes along the axis of largest separation.
    /// Negative values are penetration depths.
    pub fn separation(&self, o: &Aabb) -> f64 {
        let gx = (o.min.x - self.max.x).max(self.min.x - o.max.x);
        let gy = (o.min.y - self.max.y).max(self.min.y - o.max.y);
        let gz = (o.min.z - self.max.z).max(self.min.z - o.max.z);
        gx.max(gy).max(gz)
    }

    /// Slab test; returns the parametric entry/exit interval clipped to `[t_min, t_max]`.
    #[inline]
    pub fn ray_interval(&self, origin: Vec3, inv_dir: Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let mut lo = t_min;
        let mut hi = t_max;
        for a in 0..3 {
            if inv_dir[a].is_infinite() {
                // ray parallel to this slab
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t1 = (self.min[a] - origin[a]) * inv_dir[a];
            let t2 = (self.max[a] - origin[a]) * inv_dir[a];
            let (near, far) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            if near > lo {
                lo = near;
            }
            if far < hi {
                hi = far;
            }
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }
}

/// A 3x3 matrix stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    /// Rotation about `axis` (unit) by `angle` radians.
    pub fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y],
            [t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x],
            [t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c],
        ])
    }
}

/// Rigid world-from-camera transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

/// Serialized pose: row-major rotation and translation; validated on load.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRecord> for Pose {
    type Error = Error;
    fn try_from(r: PoseRecord) -> Result<Pose> {
        Pose::new(Mat3(r.rotation), Vec3::from_array(r.translation))
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> PoseRecord {
        PoseRecord {
            rotation: p.rotation.0,
            translation: p.translation.to_array(),
        }
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    /// Builds a pose, rejecting rotations that are not orthonormal with determinant +1.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let rtr = rotation.transpose().mul_mat(&rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr.0[i][j] - expect).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!(
                        "rotation is not orthonormal (RᵀR[{i}][{j}] = {})",
                        rtr.0[i][j]
                    )));
                }
            }
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidArgument("non-finite translation".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose {
            rotation: Mat3::IDENTITY,
            translation: t,
        }
    }

    /// Camera at `eye` looking at `target`, using the x-right / y-down / z-forward
    /// camera convention and world +z as up.
    pub fn look_at(eye: Vec3, target: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-9 {
            return Err(Error::InvalidArgument(
                "look-at target coincides with the camera position".into(),
            ));
        }
        let forward = forward.normalized();
        let mut right = forward.cross(Vec3::Z);
        if right.norm() < 1e-9 {
            // looking straight up or down: fall back to world +x as the right axis
            right = Vec3::X;
        }
        let right = right.normalized();
        let down = forward.cross(right).normalized();
        Pose::new(Mat3::from_columns(right, down, forward), eye)
    }

    #[inline]
    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.mul_vec(v)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.transform_point(other.translation),
        }
    }

    /// Camera forward (+z) axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_rejects_non_orthonormal() {
        let mut m = Mat3::IDENTITY;
        m.0[0][0] = 1.1;
        assert!(Pose::new(m, Vec3::ZERO).is_err());
        let reflect = Mat3([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(Pose::new(reflect, Vec3::ZERO).is_err());
    }

    #[test]
    fn pose_inverse_round_trip() {
        let r = Mat3::rotation(Vec3::new(1.0, 2.0, 3.0), 0.7);
        let pose = Pose::new(r, Vec3::new(1.0, -2.0, 0.5)).unwrap();
        let p = Vec3::new(0.3, 0.1, -4.0);
        let back = pose.inverse().transform_point(pose.transform_point(p));
        assert!(back.distance(p) < 1e-12);
    }

    #[test]
    fn composition_is_associative() {
        let a = Pose::new(Mat3::rotation(Vec3::X, 0.3), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let b = Pose::new(Mat3::rotation(Vec3::Y, -1.1), Vec3::new(0.0, 2.0, 0.0)).unwrap();
        let c = Pose::new(Mat3::rotation(Vec3::new(1.0, 1.0, 0.0), 2.0), Vec3::new(0.0, 0.0, 3.0)).unwrap();
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        let p = Vec3::new(0.5, -0.25, 2.0);
        assert!(left.transform_point(p).distance(right.transform_point(p)) < 1e-12);
    }

    #[test]
    fn look_at_points_forward_axis() {
        let pose = Pose::look_at(Vec3::new(1.0, 1.0, 2.0), Vec3::new(3.0, 1.0, 1.0)).unwrap();
        let expect = Vec3::new(2.0, 0.0, -1.0).normalized();
        assert!(pose.forward().distance(expect) < 1e-12);
        assert!(Pose::look_at(Vec3::ZERO, Vec3::ZERO).is_err());
    }
}
