//! Fiducial markers observed at pose level, with the two-fold planar pose
//! ambiguity, and camera / UAV pose recovery from them.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

use super::gimbal_camera_to_body;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoardLayout {
    /// Markers at known positions around the plant.
    Ring,
    /// Only marker 0 is surveyed; the rest are located in flight.
    Separate,
}

/// A square marker. The marker frame has z along the plane normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marker {
    pub id: u32,
    pub side: f64,
    /// Marker-to-world pose when known.
    pub pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerBoard {
    pub markers: Vec<Marker>,
    pub layout: BoardLayout,
}

impl MarkerBoard {
    pub fn new(markers: Vec<Marker>, layout: BoardLayout) -> Result<Self> {
        let mut ids: Vec<u32> = markers.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("marker ids must be unique".into()));
        }
        if let Some(m) = markers.iter().find(|m| !(m.side > 0.0)) {
            return Err(Error::InvalidConfig(format!("marker {} has non-positive side length", m.id)));
        }
        Ok(Self { markers, layout })
    }

    /// `n` flat markers facing up, evenly spaced on a circle around `center`.
    pub fn ring(n: usize, center: Vec3, radius: f64, side: f64) -> Result<Self> {
        let markers = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * (i as f64 + 0.5) / n as f64;
                let rot = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), a);
                Marker {
                    id: i as u32,
                    side,
                    pose: Some(Pose::new(rot, center + Vec3::new(radius * a.cos(), radius * a.sin(), 0.0))),
                }
            })
            .collect();
        Self::new(markers, BoardLayout::Ring)
    }

    pub fn get(&self, id: u32) -> Option<&Marker> {
        self.markers.iter().find(|m| m.id == id)
    }

    pub fn known_pose(&self, id: u32) -> Option<Pose> {
        self.get(id).and_then(|m| m.pose)
    }

    /// What the estimator knows before flight: every pose for a ring, only
    /// marker 0 for separate markers.
    pub fn prior_knowledge(&self) -> MarkerBoard {
        let mut out = self.clone();
        if self.layout == BoardLayout::Separate {
            for m in &mut out.markers {
                if m.id != 0 {
                    m.pose = None;
                }
            }
        }
        out
    }
}

/// One detected marker: two camera-from-marker pose candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerMeasurement {
    pub id: u32,
    /// Marker-to-camera pose of the detector's preferred solution.
    pub primary: Pose,
    /// The mirrored solution of the planar pose problem.
    pub flipped: Pose,
    pub sigma_translation: f64,
    pub sigma_rotation: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationNoise {
    /// Meters.
    pub sigma_translation: f64,
    /// Radians, isotropic in the rotation tangent space.
    pub sigma_rotation: f64,
    pub dropout_prob: f64,
}

impl ObservationNoise {
    pub const NONE: ObservationNoise = ObservationNoise {
        sigma_translation: 0.0,
        sigma_rotation: 0.0,
        dropout_prob: 0.0,
    };
}

impl Default for ObservationNoise {
    fn default() -> Self {
        Self {
            sigma_translation: 0.01,
            sigma_rotation: 1f64.to_radians(),
            dropout_prob: 0.0,
        }
    }
}

/// Detection frustum of the gimbal camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    /// Full horizontal field of view, radians.
    pub fov_x: f64,
    pub fov_y: f64,
    pub max_range: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            fov_x: 80f64.to_radians(),
            fov_y: 65f64.to_radians(),
            max_range: 4.0,
        }
    }
}

/// The other solution of the planar pose problem: the marker normal
/// reflected about the line of sight to the marker center.
pub fn flip_candidate(marker_to_cam: &Pose) -> Pose {
    let t = marker_to_cam.translation;
    let Some(sight) = t.try_normalize(1e-12) else {
        return *marker_to_cam;
    };
    let normal = marker_to_cam.rotation.transform_vector(&Vec3::z());
    let mirrored = 2.0 * normal.dot(&sight) * sight - normal;
    let tilt = UnitQuaternion::rotation_between(&normal, &mirrored)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    Pose::new(tilt * marker_to_cam.rotation, t)
}

fn perturbation(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("positive sigma");
        Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    } else {
        Vec3::zeros()
    }
}

/// Noisy marker detections from the camera at `world_to_cam`. Markers behind
/// the camera, outside the field of view, beyond range or seen from behind
/// are not detected; each remaining marker is dropped with `dropout_prob`.
/// Markers whose world pose is unknown to `board` cannot be simulated and are
/// skipped, so pass the ground-truth board here.
pub fn observe_markers(
    world_to_cam: &Pose,
    board: &MarkerBoard,
    noise: &ObservationNoise,
    sensor: &SensorModel,
    seed: u64,
    timestamp: f64,
) -> Vec<MarkerMeasurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tx, ty) = ((sensor.fov_x / 2.0).tan(), (sensor.fov_y / 2.0).tan());
    let mut out = Vec::new();
    for m in &board.markers {
        let Some(marker_to_world) = m.pose else { continue };
        let rel = world_to_cam.compose(&marker_to_world);
        let c = rel.translation;
        // Draw noise for every marker so the stream does not depend on visibility.
        let dt = perturbation(&mut rng, noise.sigma_translation);
        let dr = perturbation(&mut rng, noise.sigma_rotation);
        let drop = rand::Rng::random_bool(&mut rng, noise.dropout_prob.clamp(0.0, 1.0));
        if c.z <= 1e-6 || c.norm() > sensor.max_range {
            continue;
        }
        if (c.x / c.z).abs() > tx || (c.y / c.z).abs() > ty {
            continue;
        }
        let normal = rel.rotation.transform_vector(&Vec3::z());
        if normal.dot(&c) >= 0.0 {
            continue;
        }
        if drop {
            continue;
        }
        let primary = Pose::new(UnitQuaternion::from_scaled_axis(dr) * rel.rotation, c + dt);
        out.push(MarkerMeasurement {
            id: m.id,
            primary,
            flipped: flip_candidate(&primary),
            sigma_translation: noise.sigma_translation,
            sigma_rotation: noise.sigma_rotation,
            timestamp,
        });
    }
    out
}

/// The candidate rotationally closest to `previous`; ties and the
/// no-history case pick the primary.
pub fn resolve_ambiguity(m: &MarkerMeasurement, previous: Option<&Pose>) -> Pose {
    match previous {
        None => m.primary,
        Some(prev) => {
            if m.flipped.angular_distance(prev) < m.primary.angular_distance(prev) {
                m.flipped
            } else {
                m.primary
            }
        }
    }
}

/// Sign-aligned normalized average of unit quaternions.
pub fn average_rotation(rotations: &[UnitQuaternion<f64>]) -> Option<UnitQuaternion<f64>> {
    let first = rotations.first()?;
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for q in rotations {
        let q = q.quaternion();
        if q.coords.dot(&first.coords) < 0.0 {
            acc -= q;
        } else {
            acc += q;
        }
    }
    UnitQuaternion::try_new(acc, 1e-12)
}

/// Recovers the UAV body-to-world pose from resolved detections, given as
/// `(marker id, marker-to-camera pose)`. For a separate layout, markers seen
/// together with marker 0 get their world pose filled in on the returned
/// board.
pub fn uav_pose_from_markers(
    resolved: &[(u32, Pose)],
    board: &MarkerBoard,
    gimbal_tilt: f64,
) -> Result<(Pose, MarkerBoard)> {
    let mut board = board.clone();
    if board.layout == BoardLayout::Separate {
        if let (Some(anchor_world), Some((_, anchor_cam))) =
            (board.known_pose(0), resolved.iter().find(|(id, _)| *id == 0))
        {
            let cam_to_world = anchor_world.compose(&anchor_cam.inverse());
            for (id, rel) in resolved {
                if let Some(m) = board.markers.iter_mut().find(|m| m.id == *id && m.pose.is_none()) {
                    m.pose = Some(cam_to_world.compose(rel));
                }
            }
        }
    }

    let candidates: Vec<Pose> = resolved
        .iter()
        .filter_map(|(id, rel)| board.known_pose(*id).map(|w| w.compose(&rel.inverse())))
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoKnownMarkerVisible);
    }
    let translation = candidates.iter().map(|p| p.translation).sum::<Vec3>() / candidates.len() as f64;
    let rotations: Vec<_> = candidates.iter().map(|p| p.rotation).collect();
    let rotation = average_rotation(&rotations).ok_or(Error::NoKnownMarkerVisible)?;
    let cam_to_world = Pose::new(rotation, translation);
    let body = cam_to_world.compose(&gimbal_camera_to_body(gimbal_tilt).inverse());
    Ok((body, board))
}
