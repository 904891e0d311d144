//! Metric-scale alignment of pose sets: ground recentering and a
//! closed-form similarity fit between paired camera centers.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("similarity scale must be positive, got {scale}")));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.scale * self.rotation.transform_vector(p) + self.translation
    }

    pub fn inverse(&self) -> Sim3 {
        let rotation = self.rotation.inverse();
        Sim3 {
            scale: 1.0 / self.scale,
            rotation,
            translation: -rotation.transform_vector(&self.translation) / self.scale,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.transform_point(&other.translation),
        }
    }
}

/// Ground point below the mean camera center, and the centers shifted so
/// that point becomes the origin. The ground plane is z = 0.
pub fn recenter_to_ground(centers: &[Vec3]) -> Result<(Vec3, Vec<Vec3>)> {
    if centers.is_empty() {
        return Err(Error::EmptyInput("camera centers"));
    }
    let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
    let center = Vec3::new(mean.x, mean.y, 0.0);
    Ok((center, centers.iter().map(|c| c - center).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub transform: Sim3,
    /// Root mean square distance between mapped source and destination.
    pub residual_rms: f64,
}

/// Least-squares similarity mapping `src` onto `dst` (Umeyama), with the
/// reflection guard. Needs at least three pairs spanning a plane.
pub fn similarity_align(src: &[Vec3], dst: &[Vec3]) -> Result<Alignment> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            expected: src.len(),
            actual: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!("{n} correspondences, need at least 3")));
    }
    let nf = n as f64;
    let mu_s = src.iter().sum::<Vec3>() / nf;
    let mu_d = dst.iter().sum::<Vec3>() / nf;

    let mut src_cov = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        src_cov += a * a.transpose();
        cross += b * a.transpose();
    }
    src_cov /= nf;
    cross /= nf;

    let eig = src_cov.symmetric_eigenvalues();
    let mut ev = [eig[0], eig[1], eig[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateConfiguration("source points are collinear or coincident".into()));
    }
    let var_s = src_cov.trace();

    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut signs = Vec3::repeat(1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        // Flip the least significant axis instead of reflecting.
        let (min_idx, _) = svd.singular_values.argmin();
        signs[min_idx] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = svd.singular_values.component_mul(&signs).sum() / var_s;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = mu_d - scale * rotation.transform_vector(&mu_s);
    let transform = Sim3::new(scale, rotation, translation)?;

    let sq: f64 = src.iter().zip(dst).map(|(s, d)| (transform.transform_point(s) - d).norm_squared()).sum();
    Ok(Alignment {
        transform,
        residual_rms: (sq / nf).sqrt(),
    })
}

/// Re-expresses world-to-camera poses in the frame mapped by `t`: centers go
/// to `s·R·c + t`, orientations turn by `R`, and camera-frame distances
/// scale with `s`.
pub fn apply_sim3(t: &Sim3, poses: &[Pose]) -> Vec<Pose> {
    poses
        .iter()
        .map(|p| {
            let rotation = p.rotation * t.rotation.inverse();
            let translation = t.scale * p.translation - rotation.transform_vector(&t.translation);
            Pose::new(rotation, translation)
        })
        .collect()
}

/// Mean geodesic angle between aligned source orientations and destination
/// orientations. Reported only; the fit uses centers.
pub fn orientation_residual(t: &Sim3, src: &[Pose], dst: &[Pose]) -> f64 {
    if src.is_empty() {
        return 0.0;
    }
    let aligned = apply_sim3(t, src);
    aligned.iter().zip(dst).map(|(a, b)| a.angular_distance(b)).sum::<f64>() / src.len() as f64
}
