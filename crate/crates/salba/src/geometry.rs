//! Camera and pose primitives: SE(3) parameterization, pinhole projection,
//! reprojection residuals and the analytic Jacobians used by every solver.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth below which a point is treated as being on or behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Angle threshold below which exp/log switch to their series expansions.
const SMALL_ANGLE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// The point sits on or behind the camera plane; the projection is
    /// undefined and the caller must drop the observation.
    #[error("point has non-positive camera-frame depth {0:.3e}")]
    NonPositiveDepth(f64),
}

/// A rigid transform stored as a unit quaternion plus a translation.
///
/// The solvers use it as the world-to-camera map: a world point `X` lands in
/// the camera frame as `R * X + t`. Trajectory files instead carry
/// camera-in-world poses; [`SE3Pose::inverse`] converts between the two.
///
/// The quaternion is renormalized after every construction and update, so
/// its norm stays within 1e-9 of one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE3Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::new_normalize(rotation.into_inner()), translation }
    }

    /// Builds a pose from raw quaternion components in (w, x, y, z) order,
    /// normalizing them. Used by the trajectory loaders.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)), translation }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        Self::new(rot_inv, -(rot_inv * self.translation))
    }

    /// Position of the camera in the world frame when `self` is a
    /// world-to-camera pose: `-R^T * t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Group exponential of a twist `(omega, rho)`: the first three
    /// components are the rotation vector, the last three feed the
    /// translation through the usual V matrix, so a zero rotation gives a
    /// pure translation `rho`.
    pub fn exp(twist: &Vector6<f64>) -> Self {
        let omega = twist.fixed_rows::<3>(0).into_owned();
        let rho = twist.fixed_rows::<3>(3).into_owned();
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        Self { rotation, translation: exp_v_matrix(&omega) * rho }
    }

    /// Group logarithm; inverse of [`SE3Pose::exp`] for rotation angles
    /// below pi.
    pub fn log(&self) -> Vector6<f64> {
        let omega = self.rotation.scaled_axis();
        let rho = log_v_inverse(&omega) * self.translation;
        let mut twist = Vector6::zeros();
        twist.fixed_rows_mut::<3>(0).copy_from(&omega);
        twist.fixed_rows_mut::<3>(3).copy_from(&rho);
        twist
    }

    /// Applies the solvers' local 6-dof update.
    ///
    /// The update twist lives in the world frame: it perturbs the
    /// camera-to-world pose on the left, `(exp(delta) * self^-1)^-1`, which
    /// on the stored world-to-camera pose is `self * exp(-delta)`. With this
    /// chart, translating the camera along `+delta` has exactly the opposite
    /// effect on a residual as translating the landmark along `+delta`,
    /// which is the cross-check [`reprojection_jacobian`] relies on.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        self.compose(&Self::exp(&-delta))
    }

    /// Inverse of [`SE3Pose::retract`]: the twist `delta` with
    /// `other = self.retract(delta)`.
    pub fn local_coordinates(&self, other: &Self) -> Vector6<f64> {
        -self.inverse().compose(other).log()
    }

    /// Rotation angle of `self^-1 * other` in radians.
    pub fn rotation_distance(&self, other: &Self) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

/// Free-function aliases matching the operation names used throughout the
/// docs and the Python bindings.
pub fn se3_exp(twist: &Vector6<f64>) -> SE3Pose {
    SE3Pose::exp(twist)
}

pub fn se3_log(pose: &SE3Pose) -> Vector6<f64> {
    pose.log()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// V matrix of the SE(3) exponential: `t = V(omega) * rho`.
fn exp_v_matrix(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let w = skew(omega);
    Matrix3::identity() + a * w + b * (w * w)
}

/// Closed-form inverse of the V matrix, valid for angles below pi.
fn log_v_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        // 1/theta^2 * (1 - (theta/2) * cot(theta/2)); stable up to pi where
        // cot(theta/2) -> 0.
        let half = 0.5 * theta;
        (1.0 - half * (half.cos() / half.sin())) / theta2
    };
    let w = skew(omega);
    Matrix3::identity() - 0.5 * w + c * (w * w)
}

/// Undistorted pinhole camera model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal lengths in pixels; must be positive.
    pub fx: f64,
    pub fy: f64,
    /// Principal point in pixels; must lie inside the image.
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.x < self.width as f64 && pixel.y >= 0.0 && pixel.y < self.height as f64
    }

    /// Checks the structural invariants; surfaced to config validation.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return Err("image dimensions must be at least 1x1".into());
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64 && 0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        Ok(())
    }
}

/// A 3D map point in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub position: Vector3<f64>,
}

impl Landmark {
    pub fn new(position: Vector3<f64>) -> Self {
        Self { position }
    }
}

/// One landmark sighting in one frame.
///
/// `pixel` lies inside the image at creation; `info_scalar` is the isotropic
/// inverse measurement variance (1/px^2, positive); `weight` is the saliency
/// weight, sampled once at creation and never re-evaluated afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame_id: usize,
    pub landmark_id: usize,
    pub pixel: Vector2<f64>,
    pub info_scalar: f64,
    pub weight: f64,
}

/// Projects a world point through `pose` (world-to-camera) and the pinhole
/// model: `(fx * x/z + cx, fy * y/z + cy)` for the camera-frame point
/// `(x, y, z) = R * X + t`.
pub fn project(
    pose: &SE3Pose,
    intrinsics: &CameraIntrinsics,
    point: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    let p = pose.transform_point(point);
    if p.z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Vector2::new(intrinsics.fx * p.x / p.z + intrinsics.cx, intrinsics.fy * p.y / p.z + intrinsics.cy))
}

/// Reprojection residual `obs.pixel - project(pose, K, X)`. The squared
/// Mahalanobis error of one observation is `info_scalar * |residual|^2`.
pub fn reprojection_error(
    pose: &SE3Pose,
    intrinsics: &CameraIntrinsics,
    point: &Vector3<f64>,
    obs: &Observation,
) -> Result<Vector2<f64>, GeometryError> {
    Ok(obs.pixel - project(pose, intrinsics, point)?)
}

/// Analytic Jacobian of the reprojection residual.
///
/// Returns the 2x6 pose block (columns 0..3 rotation, 3..6 translation, in
/// the chart of [`SE3Pose::retract`]) and the 2x3 landmark block. With
/// `p = R*X + t`, `A = d(pinhole)/dp`, and residual `r = z - pinhole(p)`:
///
/// ```text
///   dr/d(omega) = -(A R) [X]x      dr/d(rho) = A R      dr/dX = -A R
/// ```
///
/// so the translation columns are the landmark block negated.
pub fn reprojection_jacobian(
    pose: &SE3Pose,
    intrinsics: &CameraIntrinsics,
    point: &Vector3<f64>,
) -> Result<(Matrix2x6<f64>, Matrix2x3<f64>), GeometryError> {
    let p = pose.transform_point(point);
    if p.z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    let inv_z = 1.0 / p.z;
    let inv_z2 = inv_z * inv_z;
    let a = Matrix2x3::new(
        intrinsics.fx * inv_z,
        0.0,
        -intrinsics.fx * p.x * inv_z2,
        0.0,
        intrinsics.fy * inv_z,
        -intrinsics.fy * p.y * inv_z2,
    );
    let ar = a * pose.rotation_matrix();
    let point_block = -ar;
    let rot_block = -ar * skew(point);
    let mut pose_block = Matrix2x6::zeros();
    pose_block.fixed_columns_mut::<3>(0).copy_from(&rot_block);
    pose_block.fixed_columns_mut::<3>(3).copy_from(&ar);
    Ok((pose_block, point_block))
}
