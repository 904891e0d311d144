//! Differentiable Gaussian-splat reconstruction backend.

mod checkpoint;
mod loss;
mod primitive;
mod render;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use loss::{photometric_loss, photometric_loss_grad, LossValue};
pub use primitive::{logit, sigmoid, GaussianPrimitive, GaussianScene, ParamGroup, PARAMS_PER_PRIMITIVE};
pub use render::{
    render, render_alpha, render_gradients, SceneGradients, MAX_ALPHA, MIN_TRANSMITTANCE, NEAR_PLANE,
    SCREEN_DILATION,
};
pub use train::{dataset_loss, train, LearningRates, NearCameraPrune, Optimizer, TrainConfig};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::image::Rgb;

/// Keeps primitives whose activated opacity is at least `threshold`.
pub fn prune_by_opacity(scene: &GaussianScene, threshold: f64) -> GaussianScene {
    GaussianScene::new(
        scene
            .primitives
            .iter()
            .filter(|p| p.opacity() >= threshold)
            .cloned()
            .collect(),
    )
}

/// `true` for primitives that survive near-camera pruning.
pub(crate) fn near_camera_mask(scene: &GaussianScene, cams: &[Camera], z_min: f64, radius: f64) -> Vec<bool> {
    scene
        .primitives
        .iter()
        .map(|p| {
            !cams.iter().any(|cam| {
                let depth = cam.world_to_cam.transform_point(&p.mean).z;
                let dist = (p.mean - cam.center()).norm();
                depth < z_min && dist < radius
            })
        })
        .collect()
}

/// Removes every primitive that, for some camera, has camera-space depth below
/// `z_min` while lying within `radius` of that camera's center.
pub fn prune_near_camera(scene: &GaussianScene, cams: &[Camera], z_min: f64, radius: f64) -> GaussianScene {
    let keep = near_camera_mask(scene, cams, z_min, radius);
    GaussianScene::new(
        scene
            .primitives
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(p, _)| p.clone())
            .collect(),
    )
}

/// One isotropic primitive per colored point.
pub fn init_scene(points: &[(Vec3, Rgb)], base_scale: f64, base_opacity: f64) -> Result<GaussianScene> {
    if points.is_empty() {
        return Err(Error::EmptyInput("init_scene needs at least one point"));
    }
    if !(base_scale > 0.0) || !(0.0..1.0).contains(&base_opacity) || base_opacity <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "base_scale must be positive and base_opacity in (0, 1) (got {base_scale}, {base_opacity})"
        )));
    }
    Ok(GaussianScene::new(
        points
            .iter()
            .map(|(m, c)| GaussianPrimitive::isotropic(*m, base_scale, base_opacity, *c))
            .collect(),
    ))
}

/// Adds isotropic Gaussian noise of standard deviation `sigma` to every point.
pub fn jitter_points(points: &[(Vec3, Rgb)], sigma: f64, seed: u64) -> Vec<(Vec3, Rgb)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    points
        .iter()
        .map(|(m, c)| {
            let d = Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            (m + d, *c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, CameraIntrinsics};

    fn camera_at(eye: Vec3, target: Vec3) -> Camera {
        let k = CameraIntrinsics::new(50.0, 50.0, 32.0, 32.0, 64, 64).unwrap();
        Camera::new(k, look_at(&eye, &target, &Vec3::z()))
    }

    #[test]
    fn near_camera_pruning_thresholds() {
        let cam = camera_at(Vec3::new(0.0, 0.0, 1.0), Vec3::zeros());
        // Camera looks down -z from (0,0,1): depth = 1 - z.
        let near = GaussianPrimitive::isotropic(Vec3::new(0.39, 0.0, 0.9), 0.01, 0.5, [1.0; 3]);
        let far = GaussianPrimitive::isotropic(Vec3::new(0.0, 0.0, 0.0), 0.01, 0.5, [1.0; 3]);
        // Depth 0.1 but 0.7 m away from the center: outside the radius.
        let wide = GaussianPrimitive::isotropic(Vec3::new(0.69, 0.0, 0.9), 0.01, 0.5, [1.0; 3]);
        let scene = GaussianScene::new(vec![near.clone(), far.clone(), wide.clone()]);
        assert!((cam.world_to_cam.transform_point(&near.mean).z - 0.1).abs() < 1e-12);
        assert!(((near.mean - cam.center()).norm() - 0.4).abs() < 0.01);
        let pruned = prune_near_camera(&scene, &[cam], 0.30, 0.60);
        assert_eq!(pruned.primitives, vec![far, wide]);
        assert!(prune_near_camera(&GaussianScene::default(), &[cam], 0.3, 0.6).is_empty());
    }

    #[test]
    fn init_scene_contract() {
        assert!(init_scene(&[], 0.01, 0.5).is_err());
        let pts = vec![(Vec3::zeros(), [0.1, 0.2, 0.3]), (Vec3::x(), [0.4, 0.5, 0.6])];
        let s = init_scene(&pts, 0.02, 0.3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.primitives[0].mean, Vec3::zeros());
        assert_eq!(s.primitives[1].color, [0.4, 0.5, 0.6]);
        assert!((s.primitives[1].scale() - Vec3::repeat(0.02)).norm() < 1e-15);
        assert!((s.primitives[0].opacity() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn jitter_is_replayable() {
        let pts = vec![(Vec3::zeros(), [0.0; 3]); 10];
        let a = jitter_points(&pts, 0.01, 42);
        let b = jitter_points(&pts, 0.01, 42);
        assert_eq!(a, b);
        assert_ne!(a, jitter_points(&pts, 0.01, 43));
        let rms = (a.iter().map(|(m, _)| m.norm_squared()).sum::<f64>() / 30.0).sqrt();
        assert!(rms > 0.003 && rms < 0.03, "{rms}");
    }
}
