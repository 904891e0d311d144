use nalgebra::{Quaternion, UnitQuaternion};

use crate::geometry::{Mat3, Vec3};
use crate::image::Rgb;

/// Number of unconstrained parameters per primitive.
pub const PARAMS_PER_PRIMITIVE: usize = 14;

/// Parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Mean,
    Rotation,
    Scale,
    Opacity,
    Color,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Mean,
        ParamGroup::Rotation,
        ParamGroup::Scale,
        ParamGroup::Opacity,
        ParamGroup::Color,
    ];

    /// Slice of the flat parameter vector owned by this group.
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            ParamGroup::Mean => 0..3,
            ParamGroup::Rotation => 3..7,
            ParamGroup::Scale => 7..10,
            ParamGroup::Opacity => 10..11,
            ParamGroup::Color => 11..14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Mean => "mean",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Scale => "scale",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Color => "color",
        }
    }
}

/// One anisotropic 3D Gaussian with a flat (degree-0) color.
///
/// Scale is stored as its logarithm and opacity as a logit; the rotation is a
/// raw quaternion normalized on use. Together these form the unconstrained
/// parameterization the optimizer works on.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub color: Rgb,
}

impl GaussianPrimitive {
    pub fn new(mean: Vec3, rotation: UnitQuaternion<f64>, scale: Vec3, opacity: f64, color: Rgb) -> Self {
        let q = rotation.quaternion();
        Self {
            mean,
            rotation: [q.w, q.i, q.j, q.k],
            log_scale: scale.map(f64::ln),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn isotropic(mean: Vec3, scale: f64, opacity: f64, color: Rgb) -> Self {
        Self::new(mean, UnitQuaternion::identity(), Vec3::repeat(scale), opacity, color)
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn unit_rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_from_raw(&self.rotation)
    }

    /// `R · diag(scale²) · Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let m = self.rotation_matrix() * Mat3::from_diagonal(&self.scale());
        m * m.transpose()
    }

    pub fn params(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let mut p = [0.0; PARAMS_PER_PRIMITIVE];
        p[0..3].copy_from_slice(self.mean.as_slice());
        p[3..7].copy_from_slice(&self.rotation);
        p[7..10].copy_from_slice(self.log_scale.as_slice());
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn set_params(&mut self, p: &[f64; PARAMS_PER_PRIMITIVE]) {
        self.mean = Vec3::new(p[0], p[1], p[2]);
        self.rotation.copy_from_slice(&p[3..7]);
        self.log_scale = Vec3::new(p[7], p[8], p[9]);
        self.opacity_logit = p[10];
        self.color.copy_from_slice(&p[11..14]);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// Reconstruction state: an unordered set of primitives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
}

impl GaussianScene {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        Self { primitives }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.primitives.iter().all(GaussianPrimitive::is_finite)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of the normalized raw quaternion `(w, x, y, z)`.
pub(crate) fn rotation_from_raw(q: &[f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}
