//! Synthetic plant scenes with per-capture leaf motion.

use std::f64::consts::{PI, TAU};

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::canonical::LoopConfig;
use crate::capture::{plan_orbits, Circle, OrbitConfig};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::geometry::{Camera, CameraIntrinsics, Vec2, Vec3};
use crate::image::{ImageBuffer, Rgb};
use crate::splat::{init_scene, jitter_points, render, GaussianPrimitive, GaussianScene, TrainConfig};

/// Ground-truth motion-free scene.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalScene {
    pub scene: GaussianScene,
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveMotion {
    pub amplitude: Vec3,
    /// Radians per capture index.
    pub omega: f64,
    pub phase: f64,
    pub moving: bool,
}

impl PrimitiveMotion {
    pub const STATIC: PrimitiveMotion = PrimitiveMotion {
        amplitude: Vec3::new(0.0, 0.0, 0.0),
        omega: 0.0,
        phase: 0.0,
        moving: false,
    };

    pub fn offset(&self, capture_index: usize) -> Vec3 {
        self.amplitude * (self.omega * capture_index as f64 + self.phase).sin()
    }
}

/// Per-primitive sinusoidal displacement as a function of capture index.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub entries: Vec<PrimitiveMotion>,
}

impl MotionModel {
    pub fn none(n: usize) -> Self {
        Self {
            entries: vec![PrimitiveMotion::STATIC; n],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|m| PrimitiveMotion {
                    amplitude: m.amplitude * factor,
                    ..*m
                })
                .collect(),
        }
    }

    pub fn n_moving(&self) -> usize {
        self.entries.iter().filter(|m| m.moving).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_primitives: usize,
    /// Nominal plant radius, meters.
    pub radius: f64,
    pub seed: u64,
    pub fraction_moving: f64,
    /// Upper bound on the norm of any primitive's displacement amplitude, meters.
    pub max_amplitude: f64,
    pub center: Vec3,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_primitives: 40,
            radius: 0.3,
            seed: 7,
            fraction_moving: 0.5,
            max_amplitude: 0.06,
            center: Vec3::zeros(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_primitives == 0 {
            return Err(Error::InvalidConfig("n_primitives must be at least 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("radius must be positive (got {})", self.radius)));
        }
        if !(0.0..=1.0).contains(&self.fraction_moving) {
            return Err(Error::InvalidConfig(format!(
                "fraction_moving must be in [0, 1] (got {})",
                self.fraction_moving
            )));
        }
        if !(self.max_amplitude >= 0.0 && self.max_amplitude.is_finite()) {
            return Err(Error::InvalidConfig("max_amplitude must be non-negative".into()));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("center must be finite".into()));
        }
        Ok(())
    }

    pub fn n_moving(&self) -> usize {
        (self.fraction_moving * self.n_primitives as f64).round() as usize
    }
}

/// Samples a plant: a textured ground disk, a stem and leaves in the upper
/// hemisphere. Only leaves move.
pub fn sample_scene(cfg: &SceneConfig) -> Result<(CanonicalScene, MotionModel)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = cfg.radius;
    let n_leaves = cfg.n_moving();
    let n_static = cfg.n_primitives - n_leaves;
    let n_ground = (n_static as f64 * 0.7).ceil() as usize;
    let n_stem = n_static - n_ground;

    let mut prims = Vec::with_capacity(cfg.n_primitives);
    let mut motion = Vec::with_capacity(cfg.n_primitives);

    for _ in 0..n_ground {
        let rho = 1.1 * r * rng.random::<f64>().sqrt();
        let az = rng.random_range(0.0..TAU);
        let mean = cfg.center + Vec3::new(rho * az.cos(), rho * az.sin(), 0.0);
        let rot = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), rng.random_range(0.0..PI));
        let scale = Vec3::new(
            r * rng.random_range(0.15..0.25),
            r * rng.random_range(0.10..0.18),
            0.02 * r,
        );
        let tone = rng.random_range(0.0..1.0);
        let color = if rng.random_bool(0.5) {
            [0.30 + 0.35 * tone, 0.20 + 0.25 * tone, 0.10 + 0.10 * tone]
        } else {
            [0.75 + 0.2 * tone, 0.70 + 0.2 * tone, 0.55 + 0.2 * tone]
        };
        prims.push(GaussianPrimitive::new(mean, rot, scale, 0.95, color));
        motion.push(PrimitiveMotion::STATIC);
    }

    for i in 0..n_stem {
        let h = 0.75 * r * (i as f64 + 0.5) / n_stem as f64;
        let mean = cfg.center + Vec3::new(0.01 * r * rng.random_range(-1.0..1.0), 0.0, h);
        let scale = Vec3::new(0.05 * r, 0.05 * r, 0.75 * r / (2.0 * n_stem as f64));
        prims.push(GaussianPrimitive::new(
            mean,
            UnitQuaternion::identity(),
            scale,
            0.9,
            [0.35, 0.45, 0.15],
        ));
        motion.push(PrimitiveMotion::STATIC);
    }

    for k in 0..n_leaves {
        let az = TAU * (k as f64 + rng.random_range(0.0..0.8)) / n_leaves.max(1) as f64;
        let rho = r * rng.random_range(0.4..1.0);
        let z = r * rng.random_range(0.3..1.0);
        let mean = cfg.center + Vec3::new(rho * az.cos(), rho * az.sin(), z);
        let rot = UnitQuaternion::from_euler_angles(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), az);
        let scale = Vec3::new(
            r * rng.random_range(0.12..0.16),
            r * rng.random_range(0.07..0.10),
            0.02 * r,
        );
        let g = rng.random_range(0.0..1.0);
        let color = if k % 2 == 0 {
            [0.10 + 0.35 * g, 0.45 + 0.45 * (1.0 - g), 0.10 + 0.2 * g]
        } else {
            [0.65 + 0.3 * g, 0.75 + 0.2 * (1.0 - g), 0.15 + 0.2 * g]
        };
        prims.push(GaussianPrimitive::new(mean, rot, scale, 0.9, color));

        let dir = loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.2 && n <= 1.0 {
                break v / n;
            }
        };
        let amplitude = dir * cfg.max_amplitude * rng.random_range(0.5..1.0);
        let active = cfg.max_amplitude > 0.0;
        motion.push(PrimitiveMotion {
            amplitude: if active { amplitude } else { Vec3::zeros() },
            omega: rng.random_range(0.9..2.6),
            phase: rng.random_range(0.0..TAU),
            moving: true,
        });
    }

    Ok((
        CanonicalScene {
            scene: GaussianScene::new(prims),
            center: cfg.center,
            radius: r,
        },
        MotionModel { entries: motion },
    ))
}

/// Scene with every mean offset by its motion at `capture_index`.
pub fn displace(scene: &GaussianScene, motion: &MotionModel, capture_index: usize) -> Result<GaussianScene> {
    if scene.len() != motion.entries.len() {
        return Err(Error::LengthMismatch {
            expected: scene.len(),
            actual: motion.entries.len(),
        });
    }
    let mut out = scene.clone();
    for (p, m) in out.primitives.iter_mut().zip(&motion.entries) {
        p.mean += m.offset(capture_index);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CapturedImages {
    pub observed: Vec<ImageBuffer>,
    pub canonical: Vec<ImageBuffer>,
}

/// Observed image `k` renders the scene displaced at capture index `k`;
/// canonical image `k` renders it undisplaced.
pub fn capture_dataset(
    scene: &GaussianScene,
    motion: &MotionModel,
    cameras: &[Camera],
    background: Rgb,
) -> Result<CapturedImages> {
    if cameras.is_empty() {
        return Err(Error::EmptyInput("capture_dataset needs at least one camera"));
    }
    for c in cameras {
        c.intrinsics.validate()?;
    }
    let pairs: Vec<(ImageBuffer, ImageBuffer)> = cameras
        .par_iter()
        .enumerate()
        .map(|(k, cam)| {
            let moved = displace(scene, motion, k)?;
            Ok((render(&moved, cam, background), render(scene, cam, background)))
        })
        .collect::<Result<_>>()?;
    let (observed, canonical) = pairs.into_iter().unzip();
    Ok(CapturedImages { observed, canonical })
}

/// Full synthetic dataset description: scene, orbit and sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub orbit: OrbitConfig,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub background: Rgb,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            orbit: OrbitConfig {
                center: Vec3::new(0.0, 0.0, 0.1),
                ..OrbitConfig::default()
            },
            width: 128,
            height: 128,
            focal: 110.0,
            background: [0.0, 0.0, 0.0],
        }
    }
}

impl DatasetConfig {
    /// The frozen desk-scale benchmark: 40 primitives, 30 orbit cameras at
    /// 64×64, leaf motion of a few pixels.
    pub fn benchmark() -> Self {
        let circle = |height, tilt_deg| Circle {
            height,
            tilt_deg,
            n_waypoints: 10,
        };
        Self {
            scene: SceneConfig {
                n_primitives: 40,
                radius: 0.3,
                seed: 7,
                fraction_moving: 0.5,
                max_amplitude: 0.06,
                center: Vec3::zeros(),
            },
            orbit: OrbitConfig {
                circles: vec![circle(0.55, 35.0), circle(0.75, 50.0), circle(0.9, 65.0)],
                center: Vec3::new(0.0, 0.0, 0.1),
                min_standoff: 0.3,
                start_azimuth: 0.0,
            },
            width: 64,
            height: 64,
            focal: 90.0,
            background: [0.0, 0.0, 0.0],
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let k = self.intrinsics()?;
        Ok(plan_orbits(&self.orbit)?
            .iter()
            .map(|w| Camera::new(k, w.camera_pose()))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub truth: CanonicalScene,
    pub motion: MotionModel,
    pub cameras: Vec<Camera>,
    pub observed: Vec<ImageBuffer>,
    pub canonical: Vec<ImageBuffer>,
}

pub fn generate(cfg: &DatasetConfig) -> Result<SyntheticDataset> {
    let (truth, motion) = sample_scene(&cfg.scene)?;
    let cameras = cfg.cameras()?;
    let images = capture_dataset(&truth.scene, &motion, &cameras, cfg.background)?;
    Ok(SyntheticDataset {
        truth,
        motion,
        cameras,
        observed: images.observed,
        canonical: images.canonical,
    })
}

/// Settings frozen together with [`DatasetConfig::benchmark`]: how the
/// reconstruction is initialized, trained and iterated.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSetup {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub loop_cfg: LoopConfig,
    pub init: InitConfig,
}

/// Initialization from ground-truth means, standing in for an SfM point cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Standard deviation of the isotropic jitter applied to each mean, meters.
    pub jitter: f64,
    pub scale: f64,
    pub opacity: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            jitter: 0.01,
            scale: 0.02,
            opacity: 0.5,
            seed: 1,
        }
    }
}

impl BenchmarkSetup {
    pub fn frozen() -> Self {
        Self {
            dataset: DatasetConfig::benchmark(),
            train: TrainConfig::adam(),
            loop_cfg: LoopConfig {
                iterations: 10,
                flow: FlowConfig {
                    alpha: 30.0,
                    downsample: 1,
                    ..FlowConfig::default()
                },
                ssim_weight: 0.2,
            },
            init: InitConfig::default(),
        }
    }
}

/// One primitive per ground-truth mean, jittered, with the true colors.
pub fn initial_scene(truth: &GaussianScene, cfg: &InitConfig) -> Result<GaussianScene> {
    let points: Vec<(Vec3, Rgb)> = truth.primitives.iter().map(|p| (p.mean, p.color)).collect();
    init_scene(&jitter_points(&points, cfg.jitter, cfg.seed), cfg.scale, cfg.opacity)
}

/// Smooth analytic RGB texture translated by `shift` pixels:
/// `textured_image(w, h, s)(x) = textured_image(w, h, 0)(x − s)`.
pub fn textured_image(width: usize, height: usize, shift: Vec2) -> ImageBuffer {
    const WAVES: [(f64, f64, f64, f64); 5] = [
        (0.21, 0.13, 0.4, 0.30),
        (-0.11, 0.27, 1.7, 0.25),
        (0.33, -0.19, 2.9, 0.15),
        (0.07, 0.09, 0.3, 0.20),
        (-0.29, -0.05, 5.1, 0.10),
    ];
    ImageBuffer::from_fn(width, height, |x, y| {
        let u = x as f64 - shift.x;
        let v = y as f64 - shift.y;
        let mut c = [0.5; 3];
        for (i, (kx, ky, ph, amp)) in WAVES.iter().enumerate() {
            let s = (kx * u + ky * v + ph).sin() * amp;
            c[i % 3] += s * 0.8;
            c[(i + 1) % 3] += s * 0.3;
        }
        c.map(|v| v.clamp(0.0, 1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, project};

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        assert_eq!(sample_scene(&cfg).unwrap(), sample_scene(&cfg).unwrap());
    }

    #[test]
    fn static_scene_has_zero_amplitudes() {
        let cfg = SceneConfig {
            fraction_moving: 0.0,
            ..SceneConfig::default()
        };
        let (_, motion) = sample_scene(&cfg).unwrap();
        assert!(motion.entries.iter().all(|m| !m.moving && m.amplitude == Vec3::zeros()));
    }

    #[test]
    fn generator_contract() {
        let cfg = SceneConfig {
            n_primitives: 40,
            radius: 0.3,
            ..SceneConfig::default()
        };
        let (scene, motion) = sample_scene(&cfg).unwrap();
        assert_eq!(scene.scene.len(), 40);
        assert_eq!(motion.n_moving(), 20);
        for p in &scene.scene.primitives {
            assert!((p.mean - scene.center).norm() <= 0.9);
        }
        for m in &motion.entries {
            assert!(m.amplitude.norm() <= cfg.max_amplitude + 1e-12);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SceneConfig {
                n_primitives: 0,
                ..SceneConfig::default()
            },
            SceneConfig {
                radius: 0.0,
                ..SceneConfig::default()
            },
            SceneConfig {
                fraction_moving: 1.5,
                ..SceneConfig::default()
            },
        ] {
            assert!(matches!(sample_scene(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn zero_motion_observed_equals_canonical() {
        let cfg = DatasetConfig {
            scene: SceneConfig {
                max_amplitude: 0.0,
                ..SceneConfig::default()
            },
            orbit: OrbitConfig {
                circles: vec![Circle {
                    height: 0.6,
                    tilt_deg: 45.0,
                    n_waypoints: 3,
                }],
                ..DatasetConfig::benchmark().orbit
            },
            ..DatasetConfig::benchmark()
        };
        let d = generate(&cfg).unwrap();
        assert_eq!(d.observed, d.canonical);
    }

    #[test]
    fn zero_phase_at_index_zero_is_static() {
        let (truth, mut motion) = sample_scene(&SceneConfig::default()).unwrap();
        for m in &mut motion.entries {
            m.phase = 0.0;
        }
        assert_eq!(displace(&truth.scene, &motion, 0).unwrap(), truth.scene);
    }

    #[test]
    fn displacement_is_exact() {
        let (truth, motion) = sample_scene(&SceneConfig::default()).unwrap();
        let s = 5;
        let moved = displace(&truth.scene, &motion, s).unwrap();
        for ((a, b), m) in truth.scene.primitives.iter().zip(&moved.primitives).zip(&motion.entries) {
            for i in 0..3 {
                let expect = a.mean[i] + m.amplitude[i] * (m.omega * s as f64 + m.phase).sin();
                assert_eq!(b.mean[i], expect);
            }
        }
    }

    fn centroid(img: &ImageBuffer) -> Vec2 {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let w = img.pixel(x, y)[1];
                sx += w * x as f64;
                sy += w * y as f64;
                sw += w;
            }
        }
        Vec2::new(sx / sw, sy / sw)
    }

    #[test]
    fn moving_blob_shifts_by_projected_amount() {
        let k = CameraIntrinsics::new(80.0, 80.0, 31.5, 31.5, 64, 64).unwrap();
        let cam = Camera::new(k, look_at(&Vec3::new(0.0, -1.0, 0.0), &Vec3::zeros(), &Vec3::z()));
        let cams = vec![cam, cam];
        let scene = GaussianScene::new(vec![GaussianPrimitive::isotropic(
            Vec3::zeros(),
            0.03,
            0.9,
            [0.0, 1.0, 0.0],
        )]);
        // Amplitude chosen so the mean moves 3 px to the right at capture 1.
        let omega = 1.0_f64;
        let world_dx = 3.0 / 80.0;
        let motion = MotionModel {
            entries: vec![PrimitiveMotion {
                amplitude: Vec3::new(world_dx / omega.sin(), 0.0, 0.0),
                omega,
                phase: 0.0,
                moving: true,
            }],
        };
        let d = capture_dataset(&scene, &motion, &cams, [0.0; 3]).unwrap();
        let shifted = displace(&scene, &motion, 1).unwrap().primitives[0].mean;
        let (p0, _) = project(&k, &cam.world_to_cam, &Vec3::zeros()).unwrap();
        let (p1, _) = project(&k, &cam.world_to_cam, &shifted).unwrap();
        let expected = p1 - p0;
        assert!((expected.x - 3.0).abs() < 1e-9);
        let moved = centroid(&d.observed[1]) - centroid(&d.canonical[1]);
        assert!((moved - expected).norm() < 0.1, "{moved:?}");
        assert_eq!(d.observed[0], d.canonical[0]);
    }

    #[test]
    fn textured_image_translates_exactly() {
        let a = textured_image(32, 32, Vec2::zeros());
        let b = textured_image(32, 32, Vec2::new(3.0, -2.0));
        for y in 2..28 {
            for x in 0..29 {
                assert_eq!(a.pixel(x, y), b.pixel(x + 3, y - 2));
            }
        }
    }

    #[test]
    fn benchmark_has_30_cameras() {
        let cams = DatasetConfig::benchmark().cameras().unwrap();
        assert_eq!(cams.len(), 30);
    }
}
