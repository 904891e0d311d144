//! Rigid transforms and the pinhole camera model.
//!
//! Quaternions are Hamilton, stored `(w, x, y, z)`. A [`Pose`] maps points from
//! its source frame into its target frame; camera poses are stored
//! world-to-camera. Camera axes are x right, y down, z forward. World axes are
//! z up.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depth below which a camera-space point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    /// Builds a pose from raw `(w, x, y, z)` components, normalizing the quaternion.
    pub fn from_wxyz(q: [f64; 4], translation: Vec3) -> Self {
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(rotation, translation)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = renormalize(self.rotation * other.rotation);
        let translation = self.rotation * other.translation + self.translation;
        Pose {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        let translation = -(rotation * self.translation);
        Pose {
            rotation,
            translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Position of the source-frame origin expressed in the target frame of the
    /// inverse, i.e. the camera center for a world-to-camera pose.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    /// Rotation geodesic distance in radians.
    pub fn angular_distance(&self, other: &Pose) -> f64 {
        rotation_distance(&self.rotation, &other.rotation)
    }
}

/// Free-function form of [`Pose::compose`].
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Free-function form of [`Pose::inverse`].
pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    // atan2 stays accurate near zero where acos of the dot product does not;
    // |w| handles the double cover.
    let q = a.inverse() * b;
    2.0 * q.imag().norm().atan2(q.w.abs())
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(q.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("zero image size".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Horizontal field of view in radians.
    pub fn fov_x(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    pub fn fov_y(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.fy)).atan()
    }
}

/// A posed pinhole camera. `world_to_cam` follows the crate-wide convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub world_to_cam: Pose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, world_to_cam: Pose) -> Self {
        Self {
            intrinsics,
            world_to_cam,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.world_to_cam.center()
    }

    pub fn project(&self, point: &Vec3) -> Result<(Vec2, f64)> {
        project(&self.intrinsics, &self.world_to_cam, point)
    }
}

/// Pinhole projection. Pixel centers sit at integer coordinates.
pub fn project(cam: &CameraIntrinsics, world_to_cam: &Pose, point: &Vec3) -> Result<(Vec2, f64)> {
    let p = world_to_cam.transform_point(point);
    if p.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { z: p.z });
    }
    let u = cam.fx * p.x / p.z + cam.cx;
    let v = cam.fy * p.y / p.z + cam.cy;
    Ok((Vec2::new(u, v), p.z))
}

/// World-to-camera pose for a camera at `eye` looking at `target`, with image
/// "up" as close to `up` as possible.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Pose {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(up);
    if right.norm() < 1e-9 {
        // Looking straight along `up`; pick any perpendicular.
        right = forward.cross(&Vec3::x());
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::y());
        }
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    // Rows of the world-to-camera rotation are the camera axes in world coords.
    let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = -(rotation * eye);
    Pose::new(rotation, translation)
}
