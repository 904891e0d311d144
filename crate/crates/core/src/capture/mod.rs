//! Simulation of the marker-guided capture flight: marker observation with
//! the planar pose ambiguity, pose recovery, EKF fusion, orbit planning and
//! the feed-forward PI velocity controller.

pub mod controller;
pub mod ekf;
pub mod markers;
pub mod planner;
pub mod sim;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::geometry::{Pose, Vec3};

pub use controller::{controller_step, ramp_setpoint, ControllerGains, ControllerOutput, ControllerState, UAVState};
pub use ekf::{ekf_predict, ekf_update, Command, EkfState, Measurement, UpdateOutcome};
pub use markers::{
    observe_markers, resolve_ambiguity, uav_pose_from_markers, BoardLayout, Marker, MarkerBoard, MarkerMeasurement,
    ObservationNoise, SensorModel,
};
pub use planner::{body_pose, plan_orbits, wrap_angle, Circle, OrbitConfig, Waypoint};
pub use sim::{
    simulate_flight, write_flight_log, CaptureEvent, FlightConfig, FlightLog, FlightSample, SensorNoise, WindConfig,
    FLIGHT_LOG_HEADER,
};

/// Camera-to-body pose of the gimbal camera tilted `tilt` radians below the
/// body's forward axis. Camera axes: x right, y down, z forward. Body axes:
/// x forward, y left, z up.
pub fn gimbal_camera_to_body(tilt: f64) -> Pose {
    let level = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let level = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(level));
    let pitch = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), tilt);
    Pose::from_rotation(pitch * level)
}
