//! Seven-state Kalman filter: position, velocity and yaw.
//!
//! The motion model is linear (constant velocity pulled toward the commanded
//! velocity through a first-order lag), and so are all measurements except
//! for the wrap-around of yaw innovations.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::geometry::Vec3;

use super::planner::wrap_angle;

pub const STATE_DIM: usize = 7;
pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

const YAW: usize = 6;

/// Innovations beyond this squared Mahalanobis distance (5σ) are rejected.
pub const GATE_SQ: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

impl EkfState {
    pub fn new(position: Vec3, velocity: Vec3, yaw: f64, covariance: StateMatrix) -> Self {
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<3>(0).copy_from(&position);
        mean.fixed_rows_mut::<3>(3).copy_from(&velocity);
        mean[YAW] = yaw;
        Self { mean, covariance }
    }

    /// Diagonal covariance from per-block standard deviations.
    pub fn with_std(position: Vec3, velocity: Vec3, yaw: f64, std_pos: f64, std_vel: f64, std_yaw: f64) -> Self {
        Self::new(position, velocity, yaw, diagonal(std_pos.powi(2), std_vel.powi(2), std_yaw.powi(2)))
    }

    pub fn position(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(3).into()
    }

    pub fn yaw(&self) -> f64 {
        self.mean[YAW]
    }

    /// Largest position standard deviation along any axis direction.
    pub fn position_std(&self) -> f64 {
        let block = self.covariance.fixed_view::<3, 3>(0, 0).into_owned();
        block.symmetric_eigenvalues().max().max(0.0).sqrt()
    }

    pub fn is_consistent(&self) -> bool {
        let p = &self.covariance;
        (p - p.transpose()).amax() <= 1e-9 && p.cholesky().is_some() && self.mean.iter().all(|v| v.is_finite())
    }
}

/// Block-diagonal matrix with the given variances for position, velocity, yaw.
pub fn diagonal(var_pos: f64, var_vel: f64, var_yaw: f64) -> StateMatrix {
    let mut d = StateVector::zeros();
    for i in 0..3 {
        d[i] = var_pos;
        d[3 + i] = var_vel;
    }
    d[YAW] = var_yaw;
    StateMatrix::from_diagonal(&d)
}

/// Velocity and yaw-rate command.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub velocity: Vec3,
    pub yaw_rate: f64,
}

/// Propagates the state by `dt` seconds under `command`. Position integrates
/// the current velocity, velocity relaxes toward the command with time
/// constant `tau`, yaw integrates the commanded rate.
pub fn ekf_predict(s: &EkfState, command: &Command, dt: f64, tau: f64, q: &StateMatrix) -> EkfState {
    let k = (dt / tau).min(1.0);
    let mut f = StateMatrix::identity();
    for i in 0..3 {
        f[(i, 3 + i)] = dt;
        f[(3 + i, 3 + i)] = 1.0 - k;
    }
    let mut mean = f * s.mean;
    for i in 0..3 {
        mean[3 + i] += k * command.velocity[i];
    }
    mean[YAW] = wrap_angle(mean[YAW] + command.yaw_rate * dt);
    let p = f * s.covariance * f.transpose() + q;
    EkfState {
        mean,
        covariance: symmetrize(&p),
    }
}

fn symmetrize(p: &StateMatrix) -> StateMatrix {
    (p + p.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    /// Position and yaw, e.g. from the marker fix.
    Pose { position: Vec3, yaw: f64 },
    Altitude(f64),
    Velocity(Vec3),
    Yaw(f64),
}

impl Measurement {
    pub fn dim(&self) -> usize {
        match self {
            Measurement::Pose { .. } => 4,
            Measurement::Altitude(_) | Measurement::Yaw(_) => 1,
            Measurement::Velocity(_) => 3,
        }
    }

    /// State indices observed, in measurement order.
    fn observed(&self) -> &'static [usize] {
        match self {
            Measurement::Pose { .. } => &[0, 1, 2, YAW],
            Measurement::Altitude(_) => &[2],
            Measurement::Velocity(_) => &[3, 4, 5],
            Measurement::Yaw(_) => &[YAW],
        }
    }

    fn values(&self) -> DVector<f64> {
        match *self {
            Measurement::Pose { position, yaw } => DVector::from_vec(vec![position.x, position.y, position.z, yaw]),
            Measurement::Altitude(z) => DVector::from_element(1, z),
            Measurement::Velocity(v) => DVector::from_vec(vec![v.x, v.y, v.z]),
            Measurement::Yaw(y) => DVector::from_element(1, y),
        }
    }

    /// Diagonal noise covariance from per-component standard deviations.
    pub fn noise(&self, sigmas: &[f64]) -> DMatrix<f64> {
        assert_eq!(sigmas.len(), self.dim(), "one sigma per measured component");
        DMatrix::from_diagonal(&DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| s * s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Applied { mahalanobis_sq: f64 },
    /// Innovation failed the 5σ gate; the state is unchanged.
    Gated { mahalanobis_sq: f64 },
    /// `R` has the wrong shape or is not positive definite.
    Rejected,
}

/// Kalman update with Joseph-form covariance and 5σ innovation gating.
pub fn ekf_update(s: &EkfState, meas: &Measurement, r: &DMatrix<f64>) -> (EkfState, UpdateOutcome) {
    let m = meas.dim();
    if r.nrows() != m || r.ncols() != m || r.clone().cholesky().is_none() {
        return (*s, UpdateOutcome::Rejected);
    }
    let idx = meas.observed();
    let mut h = DMatrix::<f64>::zeros(m, STATE_DIM);
    for (row, &col) in idx.iter().enumerate() {
        h[(row, col)] = 1.0;
    }
    let z = meas.values();
    let mut y = DVector::<f64>::zeros(m);
    for (row, &col) in idx.iter().enumerate() {
        y[row] = z[row] - s.mean[col];
        if col == YAW {
            y[row] = wrap_angle(y[row]);
        }
    }
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, s.covariance.as_slice());
    let sm = &h * &p * h.transpose() + r;
    let Some(s_inv) = sm.clone().try_inverse() else {
        return (*s, UpdateOutcome::Rejected);
    };
    let d2 = (y.transpose() * &s_inv * &y)[(0, 0)];
    if !(d2 <= GATE_SQ) {
        return (*s, UpdateOutcome::Gated { mahalanobis_sq: d2 });
    }
    let k = &p * h.transpose() * &s_inv;
    let dx = &k * &y;
    let ikh = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM) - &k * &h;
    let p_new = &ikh * &p * ikh.transpose() + &k * r * k.transpose();

    let mut mean = s.mean;
    for i in 0..STATE_DIM {
        mean[i] += dx[i];
    }
    mean[YAW] = wrap_angle(mean[YAW]);
    let covariance = StateMatrix::from_column_slice(p_new.as_slice());
    (
        EkfState {
            mean,
            covariance: symmetrize(&covariance),
        },
        UpdateOutcome::Applied { mahalanobis_sq: d2 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> EkfState {
        EkfState::with_std(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), 0.2, 0.5, 0.3, 0.2)
    }

    #[test]
    fn idle_predict_keeps_position() {
        let s = EkfState::with_std(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), 0.0, 0.1, 0.1, 0.1);
        let out = ekf_predict(&s, &Command::default(), 0.1, 0.5, &StateMatrix::zeros());
        assert_eq!(out.position(), s.position());
    }

    #[test]
    fn predict_integrates_velocity() {
        let s = EkfState::with_std(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 0.0, 0.1, 0.1, 0.1);
        let cmd = Command {
            velocity: Vec3::new(1.0, 0.0, 0.0),
            yaw_rate: 0.0,
        };
        let out = ekf_predict(&s, &cmd, 0.1, 1e6, &StateMatrix::zeros());
        assert!((out.position().x - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_covariance() {
        let s = base();
        let meas = Measurement::Pose {
            position: s.position(),
            yaw: s.yaw(),
        };
        let (out, outcome) = ekf_update(&s, &meas, &meas.noise(&[0.1, 0.1, 0.1, 0.05]));
        assert!(matches!(outcome, UpdateOutcome::Applied { .. }));
        assert!((out.mean - s.mean).norm() < 1e-12);
        assert!(out.covariance.trace() < s.covariance.trace());
    }

    #[test]
    fn huge_noise_changes_nothing() {
        let s = base();
        let meas = Measurement::Pose {
            position: s.position() + Vec3::new(0.3, -0.2, 0.1),
            yaw: s.yaw() + 0.1,
        };
        let r = DMatrix::identity(4, 4) * 1e12;
        let (out, _) = ekf_update(&s, &meas, &r);
        assert!((out.mean - s.mean).norm() < 1e-9);
        assert!((out.covariance - s.covariance).amax() < 1e-9);
    }

    #[test]
    fn exact_measurements_converge() {
        let truth = Vec3::new(0.7, -0.4, 1.1);
        let mut s = EkfState::with_std(Vec3::zeros(), Vec3::zeros(), 0.0, 1.0, 0.5, 0.3);
        let meas = Measurement::Pose {
            position: truth,
            yaw: 0.0,
        };
        let r = meas.noise(&[1e-3; 4]);
        for _ in 0..10 {
            s = ekf_update(&s, &meas, &r).0;
        }
        assert!((s.position() - truth).norm() < 1e-3);
    }

    #[test]
    fn outliers_are_gated() {
        let s = EkfState::with_std(Vec3::zeros(), Vec3::zeros(), 0.0, 0.01, 0.01, 0.01);
        let meas = Measurement::Altitude(5.0);
        let (out, outcome) = ekf_update(&s, &meas, &meas.noise(&[0.01]));
        assert!(matches!(outcome, UpdateOutcome::Gated { .. }));
        assert_eq!(out, s);
    }

    #[test]
    fn yaw_innovation_wraps() {
        let s = EkfState::with_std(Vec3::zeros(), Vec3::zeros(), 3.1, 0.1, 0.1, 0.2);
        let meas = Measurement::Yaw(-3.1);
        let (out, outcome) = ekf_update(&s, &meas, &meas.noise(&[0.05]));
        assert!(matches!(outcome, UpdateOutcome::Applied { .. }));
        assert!(out.yaw().abs() > 3.0);
    }

    #[test]
    fn trace_non_increasing_without_process_noise() {
        let mut s = EkfState::with_std(Vec3::zeros(), Vec3::zeros(), 0.0, 0.5, 0.5, 0.3);
        let mut prev = s.covariance.trace();
        let cmd = Command {
            velocity: Vec3::new(0.2, 0.0, 0.0),
            yaw_rate: 0.1,
        };
        for _ in 0..200 {
            s = ekf_predict(&s, &cmd, 0.05, 0.5, &StateMatrix::zeros());
            let pose = Measurement::Pose {
                position: s.position(),
                yaw: s.yaw(),
            };
            s = ekf_update(&s, &pose, &pose.noise(&[0.02, 0.02, 0.02, 0.02])).0;
            let vel = Measurement::Velocity(s.velocity());
            s = ekf_update(&s, &vel, &vel.noise(&[0.05; 3])).0;
            let t = s.covariance.trace();
            assert!(t <= prev + 1e-15, "{prev} -> {t}");
            prev = t;
        }
    }

    proptest! {
        #[test]
        fn covariance_stays_spd(
            seed_pos in prop::array::uniform3(-2.0..2.0f64),
            meas_pos in prop::array::uniform3(-2.0..2.0f64),
            steps in 1usize..40,
            sigma in 0.001..1.0f64,
        ) {
            let mut s = EkfState::with_std(Vec3::from(seed_pos), Vec3::zeros(), 0.0, 1.0, 0.5, 0.3);
            let q = diagonal(1e-6, 1e-4, 1e-6);
            for i in 0..steps {
                s = ekf_predict(&s, &Command { velocity: Vec3::new(0.1, 0.0, -0.1), yaw_rate: 0.2 }, 0.05, 0.5, &q);
                prop_assert!(s.is_consistent());
                let m = if i % 3 == 0 {
                    Measurement::Pose { position: Vec3::from(meas_pos), yaw: 0.3 }
                } else if i % 3 == 1 {
                    Measurement::Altitude(meas_pos[2])
                } else {
                    Measurement::Velocity(Vec3::new(0.1, 0.0, 0.0))
                };
                let sig = vec![sigma; m.dim()];
                s = ekf_update(&s, &m, &m.noise(&sig)).0;
                prop_assert!(s.is_consistent());
            }
        }
    }
}
