//! Feed-forward PI velocity controller with setpoint ramping.

use crate::geometry::Vec3;

use super::ekf::Command;
use super::planner::{wrap_angle, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UAVState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub gimbal_tilt: f64,
}

impl UAVState {
    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.gimbal_tilt.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    pub k_f: Vec3,
    pub k_p: Vec3,
    pub k_i: Vec3,
    /// Per-axis bound on the accumulated error, m·s.
    pub integral_clamp: f64,
    /// Bound on the commanded speed, m/s.
    pub v_max: f64,
    /// Per-axis setpoint speed, m/s.
    pub ramp_rate: f64,
    pub k_yaw: f64,
    pub yaw_rate_max: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_f: Vec3::repeat(1.0),
            k_p: Vec3::repeat(3.0),
            k_i: Vec3::repeat(1.0),
            integral_clamp: 0.2,
            v_max: 0.8,
            ramp_rate: 0.4,
            k_yaw: 2.0,
            yaw_rate_max: 1.0,
        }
    }
}

impl ControllerGains {
    pub fn is_valid(&self) -> bool {
        let vecs = [self.k_f, self.k_p, self.k_i];
        vecs.iter().all(|v| v.iter().all(|x| x.is_finite() && *x >= 0.0))
            && [self.integral_clamp, self.ramp_rate, self.k_yaw, self.yaw_rate_max]
                .iter()
                .all(|x| x.is_finite() && *x >= 0.0)
            && self.v_max > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub setpoint: Vec3,
    pub integral: Vec3,
}

impl ControllerState {
    pub fn at(position: Vec3) -> Self {
        Self {
            setpoint: position,
            integral: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    pub command: Command,
    pub state: ControllerState,
}

/// Moves `setpoint` toward `target` by at most `rate * dt` along each axis.
pub fn ramp_setpoint(setpoint: &Vec3, target: &Vec3, rate: f64, dt: f64) -> Vec3 {
    let step = rate * dt;
    setpoint.zip_map(target, |s, t| s + (t - s).clamp(-step, step))
}

/// One control step. The error is taken against the ramped setpoint and the
/// yaw command turns the body toward the waypoint heading.
pub fn controller_step(
    est: &UAVState,
    target: &Waypoint,
    state: &ControllerState,
    feedforward: &Vec3,
    gains: &ControllerGains,
    dt: f64,
) -> ControllerOutput {
    let setpoint = ramp_setpoint(&state.setpoint, &target.position, gains.ramp_rate, dt);
    let error = setpoint - est.position;
    let c = gains.integral_clamp;
    let integral = (state.integral + error * dt).map(|v| v.clamp(-c, c));
    let mut velocity = gains.k_f.component_mul(feedforward) + gains.k_p.component_mul(&error)
        + gains.k_i.component_mul(&integral);
    let speed = velocity.norm();
    if speed > gains.v_max {
        velocity *= gains.v_max / speed;
    }
    let yaw_rate = (gains.k_yaw * wrap_angle(target.yaw - est.yaw)).clamp(-gains.yaw_rate_max, gains.yaw_rate_max);
    ControllerOutput {
        command: Command { velocity, yaw_rate },
        state: ControllerState { setpoint, integral },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hover(p: Vec3) -> UAVState {
        UAVState {
            position: p,
            velocity: Vec3::zeros(),
            yaw: 0.0,
            gimbal_tilt: 0.5,
        }
    }

    fn target(p: Vec3) -> Waypoint {
        Waypoint {
            position: p,
            tilt: 0.5,
            yaw: 0.0,
        }
    }

    fn p_only(k: f64) -> ControllerGains {
        ControllerGains {
            k_f: Vec3::zeros(),
            k_p: Vec3::repeat(k),
            k_i: Vec3::zeros(),
            ramp_rate: 100.0,
            ..Default::default()
        }
    }

    #[test]
    fn at_rest_no_command() {
        let p = Vec3::new(1.0, 2.0, 1.0);
        let out = controller_step(&hover(p), &target(p), &ControllerState::at(p), &Vec3::zeros(), &Default::default(), 0.05);
        assert_eq!(out.command.velocity, Vec3::zeros());
        assert_eq!(out.command.yaw_rate, 0.0);
    }

    #[test]
    fn proportional_term() {
        let goal = Vec3::new(1.0, 0.0, 0.0);
        let state = ControllerState::at(goal);
        let out = controller_step(&hover(Vec3::zeros()), &target(goal), &state, &Vec3::zeros(), &p_only(0.5), 0.05);
        assert!((out.command.velocity - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn integral_saturates_at_clamp() {
        let gains = ControllerGains {
            k_i: Vec3::repeat(0.01),
            ..p_only(0.0)
        };
        let goal = Vec3::new(1.0, -1.0, 0.0);
        let mut state = ControllerState::at(goal);
        for _ in 0..1000 {
            state = controller_step(&hover(Vec3::zeros()), &target(goal), &state, &Vec3::zeros(), &gains, 0.05).state;
        }
        assert_eq!(state.integral, Vec3::new(gains.integral_clamp, -gains.integral_clamp, 0.0));
    }

    #[test]
    fn setpoint_ramps() {
        let gains = ControllerGains::default();
        let out = controller_step(
            &hover(Vec3::zeros()),
            &target(Vec3::new(3.0, -3.0, 0.01)),
            &ControllerState::at(Vec3::zeros()),
            &Vec3::zeros(),
            &gains,
            0.1,
        );
        assert!((out.state.setpoint - Vec3::new(0.04, -0.04, 0.01)).norm() < 1e-12);
    }

    #[test]
    fn yaw_turns_short_way() {
        let wp = Waypoint {
            yaw: -3.0,
            ..target(Vec3::zeros())
        };
        let est = UAVState { yaw: 3.0, ..hover(Vec3::zeros()) };
        let out = controller_step(&est, &wp, &ControllerState::at(Vec3::zeros()), &Vec3::zeros(), &Default::default(), 0.05);
        assert!(out.command.yaw_rate > 0.0);
    }

    proptest! {
        #[test]
        fn command_and_integral_bounded(
            pos in prop::array::uniform3(-5.0..5.0f64),
            goal in prop::array::uniform3(-5.0..5.0f64),
            ff in prop::array::uniform3(-3.0..3.0f64),
            integ in prop::array::uniform3(-1.0..1.0f64),
            kp in 0.0..10.0f64,
            dt in 0.001..0.5f64,
        ) {
            let gains = ControllerGains { k_p: Vec3::repeat(kp), ..Default::default() };
            let state = ControllerState { setpoint: Vec3::from(pos), integral: Vec3::from(integ).map(|v| v.clamp(-0.2, 0.2)) };
            let out = controller_step(&hover(Vec3::zeros()), &target(Vec3::from(goal)), &state, &Vec3::from(ff), &gains, dt);
            prop_assert!(out.command.velocity.norm() <= gains.v_max + 1e-12);
            prop_assert!(out.state.integral.amax() <= gains.integral_clamp);
            prop_assert!((out.state.setpoint - state.setpoint).amax() <= gains.ramp_rate * dt + 1e-12);
            prop_assert!(out.command.yaw_rate.abs() <= gains.yaw_rate_max);
        }
    }
}
