//! Pinhole intrinsics, rigid camera poses, projection, and pose-error metrics.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Tolerance for rotation orthonormality checks.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("focal length must be positive, got {0}")]
    BadFocal(f64),
    #[error("image dimensions must be positive, got {width}x{height}")]
    BadDimensions { width: u32, height: u32 },
    #[error("rotation is not orthonormal with det +1 (deviation {deviation:.3e})")]
    BadRotation { deviation: f64 },
    #[error("pose contains non-finite entries")]
    NonFinite,
}

/// Calibrated pinhole intrinsics with a single focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal > 0.0) {
            return Err(GeometryError::BadFocal(self.focal));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::BadDimensions {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// True when the pixel lies inside `[0, width) x [0, height)`.
    pub fn contains(&self, pixel: Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }

    /// Project a camera-frame point; `None` when it is not strictly in front.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.focal * p.x / p.z + self.cx,
            self.focal * p.y / p.z + self.cy,
        ))
    }

    /// Unit bearing vector through a pixel, in the camera frame.
    pub fn bearing(&self, pixel: Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.focal,
            (pixel.y - self.cy) / self.focal,
            1.0,
        )
        .normalize()
    }
}

/// Rigid camera pose: `x_cam = rotation * (x_world - center)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// World-to-camera rotation, orthonormal with det +1.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates (meters).
    pub center: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            center: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, center: Vector3<f64>) -> Self {
        Pose { rotation, center }
    }

    /// Camera at `center` looking towards `target` with `up` fixing the roll.
    /// Camera axes: +z forward, +x right, +y down.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - center).normalize();
        let right = forward.cross(&up.normalize()).normalize();
        let down = forward.cross(&right).normalize();
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        Pose { rotation, center }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.rotation.iter().all(|v| v.is_finite()) || !self.center.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        let rtr = self.rotation.transpose() * self.rotation;
        let mut deviation = (rtr - Matrix3::identity()).abs().max();
        deviation = deviation.max((self.rotation.determinant() - 1.0).abs());
        if deviation > ROTATION_TOL {
            return Err(GeometryError::BadRotation { deviation });
        }
        Ok(())
    }

    pub fn world_to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (world - self.center)
    }

    /// Project a world point through this pose; `None` when behind the camera.
    pub fn project(&self, intrinsics: &Intrinsics, world: &Vector3<f64>) -> Option<Vector2<f64>> {
        intrinsics.project_camera_point(&self.world_to_camera(world))
    }
}

/// One 2D-3D correspondence used for pose scoring and minimal solves.
#[derive(Debug, Clone)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub point_id: u32,
}

/// Euclidean pixel distance between the projection and the measurement.
/// Points behind the camera yield `+inf` so they can never count as inliers.
pub fn reprojection_error(pose: &Pose, intrinsics: &Intrinsics, corr: &Correspondence) -> f64 {
    match pose.project(intrinsics, &corr.point) {
        Some(proj) => (proj - corr.pixel).norm(),
        None => f64::INFINITY,
    }
}

/// Position error in meters and rotation error in degrees.
///
/// The rotation error is the angle with cosine `(trace(R_e R_g^T) - 1) / 2`.
/// It is evaluated as `atan2(sin, cos)` with the sine taken from the
/// antisymmetric part of the relative rotation: plain `acos` loses all
/// precision below ~1e-6 degrees, where near-exact poses must still resolve.
pub fn pose_error(estimate: &Pose, ground_truth: &Pose) -> (f64, f64) {
    let position = (estimate.center - ground_truth.center).norm();
    let rel = estimate.rotation * ground_truth.rotation.transpose();
    let cos_angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin_angle = 0.5 * axis.norm();
    (position, sin_angle.atan2(cos_angle).to_degrees())
}
