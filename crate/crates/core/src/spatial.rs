//! 6-D spatial vector algebra.
//!
//! Every 6-vector and 6×6 operator in this crate is ordered linear-then-angular:
//! twists are `[v; ω]` and wrenches are `[f; n]`, so that `f·v + n·ω` is power.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const SO3_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("rotational inertia is not positive-definite")]
    InertiaNotPositiveDefinite,
    #[error("principal moments violate the triangle inequality")]
    TriangleInequality,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Skew-symmetric matrix such that `hat(p) * w == p.cross(&w)`.
pub fn hat(p: &Vec3) -> Mat3 {
    Mat3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0)
}

/// A twist: linear velocity of the reference point plus angular velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Motion6 {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Motion6 {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: v.fixed_rows::<3>(0).into_owned(),
            angular: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.linear);
        out.fixed_rows_mut::<3>(3).copy_from(&self.angular);
        out
    }
}

impl std::ops::Add for Motion6 {
    type Output = Motion6;
    fn add(self, rhs: Motion6) -> Motion6 {
        Motion6::new(self.linear + rhs.linear, self.angular + rhs.angular)
    }
}

/// A wrench: force plus moment about the reference point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Force6 {
    pub force: Vec3,
    pub moment: Vec3,
}

impl Force6 {
    pub fn new(force: Vec3, moment: Vec3) -> Self {
        Self { force, moment }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            force: v.fixed_rows::<3>(0).into_owned(),
            moment: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.force);
        out.fixed_rows_mut::<3>(3).copy_from(&self.moment);
        out
    }

    /// Power delivered by this wrench on the twist `v` (both at the same point).
    pub fn power(&self, v: &Motion6) -> f64 {
        self.force.dot(&v.linear) + self.moment.dot(&v.angular)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Re-expresses the wrench about a point displaced by `offset` from the current one.
    pub fn shifted(&self, offset: &Vec3) -> Force6 {
        Force6::new(self.force, self.moment - offset.cross(&self.force))
    }
}

impl std::ops::Add for Force6 {
    type Output = Force6;
    fn add(self, rhs: Force6) -> Force6 {
        Force6::new(self.force + rhs.force, self.moment + rhs.moment)
    }
}

impl std::ops::Sub for Force6 {
    type Output = Force6;
    fn sub(self, rhs: Force6) -> Force6 {
        Force6::new(self.force - rhs.force, self.moment - rhs.moment)
    }
}

impl std::iter::Sum for Force6 {
    fn sum<I: Iterator<Item = Force6>>(iter: I) -> Force6 {
        iter.fold(Force6::zero(), |a, b| a + b)
    }
}

/// Rigid transform mapping child-frame coordinates into the parent frame:
/// `x_parent = rotation * x_child + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    pub fn from_rotation(rotation: Mat3) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    /// Fixed-axis roll/pitch/yaw (`R = Rz(yaw) Ry(pitch) Rx(roll)`) plus translation.
    pub fn from_rpy_xyz(rpy: [f64; 3], xyz: [f64; 3]) -> Self {
        let rot = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self::new(*rot.matrix(), Vec3::new(xyz[0], xyz[1], xyz[2]))
    }

    pub fn inverse(&self) -> Transform {
        let rt = self.rotation.transpose();
        Transform::new(rt, -(rt * self.translation))
    }

    pub fn apply(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    /// `RᵀR = I` and `det R = 1` within 1e-9.
    pub fn is_valid(&self) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Mat3::identity())
            .abs()
            .max();
        err <= SO3_TOL
            && (self.rotation.determinant() - 1.0).abs() <= SO3_TOL
            && self.translation.iter().all(|x| x.is_finite())
    }
}

/// `a ∘ b`: maps `b`'s child coordinates into `a`'s parent frame.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform::new(a.rotation * b.rotation, a.rotation * b.translation + a.translation)
}

impl std::ops::Mul for Transform {
    type Output = Transform;
    fn mul(self, rhs: Transform) -> Transform {
        compose(&self, &rhs)
    }
}

/// Re-expresses a twist given at the child origin in child coordinates
/// as the same rigid motion at the parent origin in parent coordinates.
pub fn transform_motion(x: &Transform, v: &Motion6) -> Motion6 {
    let angular = x.rotation * v.angular;
    let linear = x.rotation * v.linear + x.translation.cross(&angular);
    Motion6::new(linear, angular)
}

/// Dual of [`transform_motion`]; preserves `f·v` for every twist.
pub fn transform_force(x: &Transform, f: &Force6) -> Force6 {
    let force = x.rotation * f.force;
    let moment = x.rotation * f.moment + x.translation.cross(&force);
    Force6::new(force, moment)
}

/// 6×6 operator form of [`transform_motion`].
pub fn motion_matrix(x: &Transform) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&x.rotation);
    m.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(hat(&x.translation) * x.rotation));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&x.rotation);
    m
}

/// Rotation matrix exponential of a rotation vector.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    *Rotation3::new(*w).matrix()
}

/// Rotation vector `w` with `exp_so3(w) == r` (angle in `[0, π]`).
pub fn log_so3(r: &Mat3) -> Vec3 {
    let skew = 0.5 * Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = skew.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    let angle = sin.atan2(cos);
    if angle < 1e-4 {
        // angle / sin(angle) series
        return skew * (1.0 + angle * angle / 6.0);
    }
    if cos > -0.9 {
        return skew * (angle / sin);
    }
    // near π the antisymmetric part loses precision; use the symmetric one
    let sym = 0.5 * (r + r.transpose()) - Mat3::identity() * cos;
    let col = (0..3).max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)])).unwrap();
    let mut axis = sym.column(col).into_owned().normalize();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Rigid-body inertia: mass, centre of mass in the link frame, and rotational
/// inertia about the centre of mass in link axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialInertia {
    pub mass: f64,
    pub com: Vec3,
    pub inertia_at_com: Mat3,
}

impl SpatialInertia {
    pub fn new(mass: f64, com: Vec3, inertia_at_com: Mat3) -> Result<Self, SpatialError> {
        if !mass.is_finite() || !com.iter().all(|x| x.is_finite()) {
            return Err(SpatialError::NonFinite("inertia"));
        }
        if !inertia_at_com.iter().all(|x| x.is_finite()) {
            return Err(SpatialError::NonFinite("inertia"));
        }
        if mass <= 0.0 {
            return Err(SpatialError::NonPositiveMass(mass));
        }
        let sym = 0.5 * (inertia_at_com + inertia_at_com.transpose());
        let eig = sym.symmetric_eigenvalues();
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(SpatialError::InertiaNotPositiveDefinite);
        }
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        let slack = 1e-12 * (a + b + c);
        if a + b < c - slack || a + c < b - slack || b + c < a - slack {
            return Err(SpatialError::TriangleInequality);
        }
        Ok(Self {
            mass,
            com,
            inertia_at_com: sym,
        })
    }

    pub fn point_mass(mass: f64, com: Vec3) -> Self {
        Self {
            mass,
            com,
            inertia_at_com: Mat3::zeros(),
        }
    }

    /// Dense 6×6 operator about the link origin in link axes (parallel axis applied).
    pub fn matrix(&self) -> Matrix6<f64> {
        let m = self.mass;
        let c = hat(&self.com);
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * m));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m * c));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * c));
        out.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(self.inertia_at_com - m * c * c));
        out
    }

    /// The same operator with axes rotated by `rotation` (reference point unchanged).
    pub fn rotated_matrix(&self, rotation: &Mat3) -> Matrix6<f64> {
        let i = self.matrix();
        let mut x = Matrix6::zeros();
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        x.fixed_view_mut::<3, 3>(3, 3).copy_from(rotation);
        x * i * x.transpose()
    }
}
