//! Closed-loop capture flight: simulated sensors, EKF, controller and a
//! kinematic UAV with lagged velocity response and gusty wind.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Vec3};

use super::controller::{controller_step, ramp_setpoint, ControllerGains, ControllerState, UAVState};
use super::ekf::{diagonal, ekf_predict, ekf_update, Command, EkfState, Measurement, StateMatrix, UpdateOutcome};
use super::gimbal_camera_to_body;
use super::markers::{observe_markers, resolve_ambiguity, uav_pose_from_markers, MarkerBoard, ObservationNoise, SensorModel};
use super::planner::{body_pose, wrap_angle, Waypoint};

/// Ornstein–Uhlenbeck gust model: an acceleration disturbance with
/// stationary standard deviation `sigma` per axis and correlation time `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindConfig {
    pub sigma: f64,
    pub tau: f64,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self { sigma: 0.0, tau: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoise {
    pub markers: ObservationNoise,
    /// Barometric altitude, m.
    pub altitude: f64,
    /// Onboard velocity, m/s per axis.
    pub velocity: f64,
    /// Compass heading, rad.
    pub yaw: f64,
}

impl SensorNoise {
    pub const NONE: SensorNoise = SensorNoise {
        markers: ObservationNoise::NONE,
        altitude: 0.0,
        velocity: 0.0,
        yaw: 0.0,
    };
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            markers: ObservationNoise::default(),
            altitude: 0.02,
            velocity: 0.05,
            yaw: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightConfig {
    pub dt: f64,
    /// Velocity response time constant of the airframe, s.
    pub tau: f64,
    pub gains: ControllerGains,
    pub wind: WindConfig,
    pub noise: SensorNoise,
    pub sensor: SensorModel,
    /// Seconds spent on one waypoint before it is abandoned.
    pub timeout: f64,
    pub capture_tolerance: f64,
    pub capture_speed: f64,
    pub capture_yaw: f64,
    /// Captures wait until the estimated position is this certain, m.
    pub max_position_std: f64,
    /// Process noise spectral densities for position, velocity, yaw.
    pub process_noise: [f64; 3],
    /// Initial standard deviations for position, velocity, yaw.
    pub initial_std: [f64; 3],
    /// Take-off position; `None` starts at the first waypoint.
    pub start: Option<Vec3>,
    pub intrinsics: CameraIntrinsics,
}

impl Default for FlightConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            tau: 0.5,
            gains: ControllerGains::default(),
            wind: WindConfig::default(),
            noise: SensorNoise::default(),
            sensor: SensorModel::default(),
            timeout: 30.0,
            capture_tolerance: 0.05,
            capture_speed: 0.1,
            capture_yaw: 3f64.to_radians(),
            max_position_std: 0.03,
            process_noise: [1e-4, 2e-2, 1e-4],
            initial_std: [0.5, 0.2, 0.1],
            start: None,
            intrinsics: CameraIntrinsics {
                fx: 110.0,
                fy: 110.0,
                cx: 63.5,
                cy: 63.5,
                width: 128,
                height: 128,
            },
        }
    }
}

impl FlightConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.dt, self.tau, self.timeout, self.capture_tolerance, self.capture_speed];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "dt, tau, timeout and capture thresholds must be positive".into(),
            ));
        }
        if !self.gains.is_valid() {
            return Err(Error::InvalidConfig("controller gains must be non-negative with v_max > 0".into()));
        }
        if !(self.wind.sigma >= 0.0) || !(self.wind.tau > 0.0) {
            return Err(Error::InvalidConfig("wind sigma must be >= 0 and tau > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.noise.markers.dropout_prob) {
            return Err(Error::InvalidConfig("dropout probability must lie in [0, 1]".into()));
        }
        self.intrinsics.validate()
    }

    fn process_matrix(&self) -> StateMatrix {
        let [p, v, y] = self.process_noise;
        diagonal(p * self.dt, v * self.dt, y * self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightSample {
    pub t: f64,
    pub true_position: Vec3,
    pub est_position: Vec3,
    pub setpoint: Vec3,
    pub waypoint_idx: usize,
    pub captured: bool,
    pub covariance: StateMatrix,
}

impl FlightSample {
    pub fn estimation_error(&self) -> f64 {
        (self.true_position - self.est_position).norm()
    }

    pub fn tracking_error(&self) -> f64 {
        (self.true_position - self.setpoint).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureEvent {
    pub waypoint_idx: usize,
    pub t: f64,
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera pose believed by the estimator.
    pub estimated: Pose,
    /// World-to-camera pose the image was actually taken from.
    pub truth: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub samples: Vec<FlightSample>,
    pub captures: Vec<CaptureEvent>,
    /// Waypoints abandoned after the timeout.
    pub unreached: Vec<usize>,
    pub gated_updates: usize,
}

impl FlightLog {
    fn rms(&self, f: impl Fn(&FlightSample) -> f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| f(s).powi(2)).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn rms_estimation_error(&self) -> f64 {
        self.rms(FlightSample::estimation_error)
    }

    pub fn rms_tracking_error(&self) -> f64 {
        self.rms(FlightSample::tracking_error)
    }

    pub fn complete(&self, n_waypoints: usize) -> bool {
        self.captures.len() == n_waypoints && self.unreached.is_empty()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    } else {
        0.0
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    Vec3::new(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma))
}

/// Noise floor used in `R` so noiseless sensors still give a valid update.
const MIN_SIGMA: f64 = 1e-3;

fn sigma(s: f64) -> f64 {
    s.max(MIN_SIGMA)
}

fn heading(pose: &Pose) -> f64 {
    let x = pose.rotation.transform_vector(&Vec3::x());
    x.y.atan2(x.x)
}

/// Consecutive gated marker fixes before the estimate is reset to them.
const REACQUIRE_AFTER: usize = 10;

fn reacquire(s: &EkfState, fix: &Measurement, std_pos: f64) -> EkfState {
    let Measurement::Pose { position, yaw } = *fix else {
        return *s;
    };
    let mut out = *s;
    out.mean.fixed_rows_mut::<3>(0).copy_from(&position);
    out.mean[6] = yaw;
    let keep = out.covariance.fixed_view::<3, 3>(3, 3).into_owned();
    let yaw_var = out.covariance[(6, 6)];
    out.covariance = StateMatrix::zeros();
    out.covariance.fixed_view_mut::<3, 3>(3, 3).copy_from(&keep);
    for i in 0..3 {
        out.covariance[(i, i)] = std_pos * std_pos;
    }
    out.covariance[(6, 6)] = yaw_var.max(0.01);
    out
}

fn camera_to_world(position: &Vec3, yaw: f64, tilt: f64) -> Pose {
    body_pose(position, yaw).compose(&gimbal_camera_to_body(tilt))
}

/// Flies the waypoints in order and logs one sample per step. A waypoint is
/// captured once the estimate sits within tolerance of it, slow, on heading
/// and well localized; it is abandoned after `cfg.timeout` seconds.
pub fn simulate_flight(board: &MarkerBoard, waypoints: &[Waypoint], cfg: &FlightConfig, seed: u64) -> Result<FlightLog> {
    if waypoints.is_empty() {
        return Err(Error::EmptyInput("waypoints"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = cfg.dt;
    let q = cfg.process_matrix();

    let start = cfg.start.unwrap_or(waypoints[0].position);
    let mut pos = start;
    let mut vel = Vec3::zeros();
    let mut yaw = waypoints[0].yaw;
    let mut wind = Vec3::zeros();
    let [sp, sv, sy] = cfg.initial_std;
    let mut ekf = EkfState::with_std(pos, vel, yaw, sp, sv, sy);
    let mut ctrl = ControllerState::at(start);
    let mut known = board.prior_knowledge();
    let mut last_seen: HashMap<u32, Pose> = HashMap::new();
    let mut gated_run = 0usize;

    let mut log = FlightLog {
        samples: Vec::new(),
        captures: Vec::new(),
        unreached: Vec::new(),
        gated_updates: 0,
    };
    let mut active = 0usize;
    let mut since = 0.0;
    let mut step = 0u64;
    let wind_decay = dt / cfg.wind.tau;
    let wind_kick = cfg.wind.sigma * (2.0 * dt / cfg.wind.tau).sqrt();

    while active < waypoints.len() {
        let t = step as f64 * dt;
        let target = &waypoints[active];
        let tilt = target.tilt;

        wind += -wind * wind_decay + gaussian3(&mut rng, wind_kick);

        // Marker fix.
        let true_cam = camera_to_world(&pos, yaw, tilt);
        let obs_seed: u64 = rng.random();
        let detections = observe_markers(&true_cam.inverse(), board, &cfg.noise.markers, &cfg.sensor, obs_seed, t);
        let est_cam = camera_to_world(&ekf.position(), ekf.yaw(), tilt);
        let resolved: Vec<(u32, Pose)> = detections
            .iter()
            .map(|m| {
                let predicted = known.known_pose(m.id).map(|w| est_cam.inverse().compose(&w));
                let previous = predicted.or_else(|| last_seen.get(&m.id).copied());
                (m.id, resolve_ambiguity(m, previous.as_ref()))
            })
            .collect();
        for (id, rel) in &resolved {
            last_seen.insert(*id, *rel);
        }
        if let Ok((body, updated)) = uav_pose_from_markers(&resolved, &known, tilt) {
            known = updated;
            let n = resolved.iter().filter(|(id, _)| known.known_pose(*id).is_some()).count().max(1) as f64;
            let range = resolved.iter().map(|(_, r)| r.translation.norm()).sum::<f64>() / resolved.len() as f64;
            let noise = &cfg.noise.markers;
            let s_pos = sigma((noise.sigma_translation.powi(2) + (noise.sigma_rotation * range).powi(2)).sqrt() / n.sqrt());
            let s_yaw = sigma(noise.sigma_rotation / n.sqrt());
            let meas = Measurement::Pose {
                position: body.translation,
                yaw: heading(&body),
            };
            let (next, outcome) = ekf_update(&ekf, &meas, &meas.noise(&[s_pos, s_pos, s_pos, s_yaw]));
            if matches!(outcome, UpdateOutcome::Gated { .. }) {
                log.gated_updates += 1;
                gated_run += 1;
            } else {
                gated_run = 0;
            }
            ekf = next;
            if gated_run >= REACQUIRE_AFTER {
                // Persistent disagreement: trust the markers again.
                log::debug!("re-acquiring position at t={t:.2}");
                ekf = reacquire(&ekf, &meas, cfg.initial_std[0]);
                gated_run = 0;
            }
        }

        // Onboard sensors.
        let n = &cfg.noise;
        let readings = [
            (Measurement::Altitude(pos.z + gaussian(&mut rng, n.altitude)), vec![sigma(n.altitude)]),
            (Measurement::Velocity(vel + gaussian3(&mut rng, n.velocity)), vec![sigma(n.velocity); 3]),
            (Measurement::Yaw(wrap_angle(yaw + gaussian(&mut rng, n.yaw))), vec![sigma(n.yaw)]),
        ];
        for (meas, sig) in readings {
            let (next, outcome) = ekf_update(&ekf, &meas, &meas.noise(&sig));
            if matches!(outcome, UpdateOutcome::Gated { .. }) {
                log.gated_updates += 1;
            }
            ekf = next;
        }

        // Capture decision.
        let est_pos = ekf.position();
        // The true position must be inside the tolerance, not just the estimate.
        let ready = (est_pos - target.position).norm() + ekf.position_std() < cfg.capture_tolerance
            && ekf.velocity().norm() < cfg.capture_speed
            && wrap_angle(ekf.yaw() - target.yaw).abs() < cfg.capture_yaw
            && ekf.position_std() < cfg.max_position_std;
        log.samples.push(FlightSample {
            t,
            true_position: pos,
            est_position: est_pos,
            setpoint: ctrl.setpoint,
            waypoint_idx: active,
            captured: ready,
            covariance: ekf.covariance,
        });
        if ready {
            log.captures.push(CaptureEvent {
                waypoint_idx: active,
                t,
                intrinsics: cfg.intrinsics,
                estimated: camera_to_world(&est_pos, ekf.yaw(), tilt).inverse(),
                truth: true_cam.inverse(),
            });
        }
        if ready || since >= cfg.timeout {
            if !ready {
                log::warn!("waypoint {active} not reached within {:.1} s", cfg.timeout);
                log.unreached.push(active);
            }
            active += 1;
            since = 0.0;
            if active == waypoints.len() {
                break;
            }
        }
        let target = &waypoints[active];

        // Control and propagation.
        let next_setpoint = ramp_setpoint(&ctrl.setpoint, &target.position, cfg.gains.ramp_rate, dt);
        let feedforward = (next_setpoint - ctrl.setpoint) / dt;
        let est = UAVState {
            position: ekf.position(),
            velocity: ekf.velocity(),
            yaw: ekf.yaw(),
            gimbal_tilt: target.tilt,
        };
        let out = controller_step(&est, target, &ctrl, &feedforward, &cfg.gains, dt);
        ctrl = out.state;
        ekf = ekf_predict(&ekf, &out.command, dt, cfg.tau, &q);
        let Command { velocity: u, yaw_rate } = out.command;
        pos += vel * dt;
        vel += (u - vel) * (dt / cfg.tau).min(1.0) + wind * dt;
        yaw = wrap_angle(yaw + yaw_rate * dt);

        step += 1;
        since += dt;
    }
    Ok(log)
}

pub const FLIGHT_LOG_HEADER: &str = "t,true_x,true_y,true_z,est_x,est_y,est_z,err,waypoint_idx,captured";

/// Writes the log as CSV. `err` is the distance between true and estimated
/// positions; `captured` is 1 on the step a capture fired.
pub fn write_flight_log<W: Write>(log: &FlightLog, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{FLIGHT_LOG_HEADER}")?;
    for s in &log.samples {
        let (p, e) = (s.true_position, s.est_position);
        writeln!(
            out,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            s.t,
            p.x,
            p.y,
            p.z,
            e.x,
            e.y,
            e.z,
            s.estimation_error(),
            s.waypoint_idx,
            u8::from(s.captured)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::planner::{plan_orbits, Circle, OrbitConfig};

    fn ring() -> MarkerBoard {
        MarkerBoard::ring(4, Vec3::zeros(), 0.35, 0.15).unwrap()
    }

    fn one_circle() -> Vec<Waypoint> {
        plan_orbits(&OrbitConfig {
            circles: vec![Circle {
                height: 1.0,
                tilt_deg: 50.0,
                n_waypoints: 25,
            }],
            ..Default::default()
        })
        .unwrap()
    }

    fn quiet() -> FlightConfig {
        FlightConfig {
            noise: SensorNoise::NONE,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_circle_captures_everything() {
        let wps = one_circle();
        let log = simulate_flight(&ring(), &wps, &quiet(), 0).unwrap();
        assert_eq!(log.captures.len(), 25);
        assert!(log.unreached.is_empty());
        for c in &log.captures {
            let err = (c.truth.center() - wps[c.waypoint_idx].position).norm();
            assert!(err < 0.05, "waypoint {} error {err}", c.waypoint_idx);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = FlightConfig {
            wind: WindConfig { sigma: 0.3, tau: 2.0 },
            ..Default::default()
        };
        let wps = &one_circle()[..5];
        let a = simulate_flight(&ring(), wps, &cfg, 3).unwrap();
        let b = simulate_flight(&ring(), wps, &cfg, 3).unwrap();
        let c = simulate_flight(&ring(), wps, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn windy_flight_tracks() {
        let cfg = FlightConfig {
            wind: WindConfig { sigma: 0.3, tau: 2.0 },
            ..Default::default()
        };
        let wps = one_circle();
        let log = simulate_flight(&ring(), &wps, &cfg, 1).unwrap();
        assert!(log.complete(wps.len()), "unreached {:?}", log.unreached);
        let rms = log.rms_tracking_error();
        assert!(rms.is_finite() && rms < 0.15, "tracking rms {rms}");
    }

    #[test]
    fn blind_flight_coasts() {
        let mut cfg = FlightConfig {
            timeout: 5.0,
            ..Default::default()
        };
        cfg.noise.markers.dropout_prob = 1.0;
        let wps = &one_circle()[..3];
        let log = simulate_flight(&ring(), wps, &cfg, 2).unwrap();
        assert!(log.captures.is_empty());
        assert_eq!(log.unreached, vec![0, 1, 2]);
        for w in log.samples.windows(2) {
            let (a, b) = (&w[0].covariance, &w[1].covariance);
            assert!(b[(0, 0)] > a[(0, 0)] && b[(1, 1)] > a[(1, 1)]);
        }
    }

    #[test]
    fn covariance_stays_valid_in_flight() {
        let cfg = FlightConfig {
            wind: WindConfig { sigma: 0.3, tau: 2.0 },
            ..Default::default()
        };
        let log = simulate_flight(&ring(), &one_circle()[..4], &cfg, 5).unwrap();
        for s in &log.samples {
            let p = s.covariance;
            assert!((p - p.transpose()).amax() <= 1e-9);
            assert!(p.cholesky().is_some());
        }
    }

    #[test]
    fn log_csv_shape() {
        let log = simulate_flight(&ring(), &one_circle()[..2], &quiet(), 0).unwrap();
        let mut buf = Vec::new();
        write_flight_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], FLIGHT_LOG_HEADER);
        assert_eq!(lines.len(), log.samples.len() + 1);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 10));
        assert_eq!(lines.iter().filter(|l| l.ends_with(",1")).count(), 2);
    }

    #[test]
    fn rejects_empty_plan() {
        assert!(matches!(simulate_flight(&ring(), &[], &quiet(), 0), Err(Error::EmptyInput(_))));
    }
}
