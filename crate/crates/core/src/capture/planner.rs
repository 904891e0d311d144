//! Orbit planning: circles at several heights, each with its own gimbal tilt.

use std::f64::consts::{PI, TAU};

use nalgebra::UnitQuaternion;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

use super::gimbal_camera_to_body;

/// A capture target: position, gimbal tilt below the horizon, and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Vec3,
    /// Radians below the horizon, in `(0, π/2)`.
    pub tilt: f64,
    /// Heading of the body x axis, radians from world +x toward +y.
    pub yaw: f64,
}

impl Waypoint {
    /// Camera-to-world pose of the gimbal camera at this waypoint.
    pub fn camera_to_world(&self) -> Pose {
        body_pose(&self.position, self.yaw).compose(&gimbal_camera_to_body(self.tilt))
    }

    /// World-to-camera pose, the storage convention for cameras.
    pub fn camera_pose(&self) -> Pose {
        self.camera_to_world().inverse()
    }
}

/// Body-to-world pose for a level body at `position` with heading `yaw`.
pub fn body_pose(position: &Vec3, yaw: f64) -> Pose {
    Pose::new(UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw), *position)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    /// Height above the plant center, meters.
    pub height: f64,
    pub tilt_deg: f64,
    pub n_waypoints: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitConfig {
    pub circles: Vec<Circle>,
    pub center: Vec3,
    /// Minimum allowed camera-to-center distance, meters.
    pub min_standoff: f64,
    /// Azimuth of the first waypoint on every circle, radians.
    pub start_azimuth: f64,
}

impl Default for OrbitConfig {
    /// Four circles with tilts 40/50/50/60° and 25 waypoints each; the height
    /// steps up between the second and third circle.
    fn default() -> Self {
        let circle = |height, tilt_deg| Circle {
            height,
            tilt_deg,
            n_waypoints: 25,
        };
        Self {
            circles: vec![circle(0.8, 40.0), circle(1.0, 50.0), circle(1.3, 50.0), circle(1.6, 60.0)],
            center: Vec3::zeros(),
            min_standoff: 0.3,
            start_azimuth: 0.0,
        }
    }
}

/// Waypoints evenly spaced in azimuth on each circle, with circle radius
/// `height / tan(tilt)` so the gimbal points at the center.
pub fn plan_orbits(cfg: &OrbitConfig) -> Result<Vec<Waypoint>> {
    if cfg.circles.is_empty() {
        return Err(Error::InvalidConfig("orbit plan needs at least one circle".into()));
    }
    let mut out = Vec::new();
    for (ci, c) in cfg.circles.iter().enumerate() {
        if !(c.tilt_deg > 0.0 && c.tilt_deg < 90.0) {
            return Err(Error::InvalidConfig(format!(
                "circle {ci}: tilt {}° outside (0°, 90°)",
                c.tilt_deg
            )));
        }
        if !(c.height > 0.0) {
            return Err(Error::InvalidConfig(format!("circle {ci}: height must be positive")));
        }
        if c.n_waypoints == 0 {
            return Err(Error::InvalidConfig(format!("circle {ci}: no waypoints")));
        }
        let tilt = c.tilt_deg.to_radians();
        let radius = c.height / tilt.tan();
        let standoff = c.height.hypot(radius);
        if standoff < cfg.min_standoff {
            return Err(Error::InvalidConfig(format!(
                "circle {ci}: camera distance {standoff:.3} m below the minimum standoff {:.3} m",
                cfg.min_standoff
            )));
        }
        for k in 0..c.n_waypoints {
            let azimuth = cfg.start_azimuth + TAU * k as f64 / c.n_waypoints as f64;
            let position = cfg.center + Vec3::new(radius * azimuth.cos(), radius * azimuth.sin(), c.height);
            out.push(Waypoint {
                position,
                tilt,
                yaw: wrap_angle(azimuth + PI),
            });
        }
    }
    Ok(out)
}

/// Wraps to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}
