//! TOML run configuration. Every key is optional and falls back to the
//! library default; unknown keys are rejected.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use canonica_core::canonical::LoopConfig;
use canonica_core::capture::{
    Circle, ControllerGains, FlightConfig, MarkerBoard, ObservationNoise, OrbitConfig, SensorNoise, WindConfig,
};
use canonica_core::flow::FlowConfig;
use canonica_core::splat::{LearningRates, NearCameraPrune, Optimizer};
use canonica_core::synth::{DatasetConfig, InitConfig, SceneConfig};
use canonica_core::{CameraIntrinsics, TrainConfig, Vec3};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub scene: SceneSection,
    pub orbit: OrbitSection,
    pub camera: CameraSection,
    pub init: InitSection,
    pub train: TrainSection,
    pub flow: FlowSection,
    pub canonical: CanonicalSection,
    pub flight: FlightSection,
    pub markers: MarkerSection,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            scene: self.scene.to_core(),
            orbit: self.orbit.to_core(),
            width: self.camera.width,
            height: self.camera.height,
            focal: self.camera.focal,
            background: self.camera.background,
        }
    }
}

/// Degrees that convert back to exactly `rad`, preferring a short decimal.
fn round_trip_degrees(rad: f64) -> f64 {
    let deg = rad.to_degrees();
    let short = (deg * 1e9).round() / 1e9;
    if short.to_radians() == rad {
        short
    } else {
        deg
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub n_primitives: usize,
    pub radius: f64,
    pub seed: u64,
    pub fraction_moving: f64,
    pub max_amplitude: f64,
    pub center: [f64; 3],
}

impl Default for SceneSection {
    fn default() -> Self {
        let d = SceneConfig::default();
        Self {
            n_primitives: d.n_primitives,
            radius: d.radius,
            seed: d.seed,
            fraction_moving: d.fraction_moving,
            max_amplitude: d.max_amplitude,
            center: d.center.into(),
        }
    }
}

impl SceneSection {
    pub fn to_core(&self) -> SceneConfig {
        SceneConfig {
            n_primitives: self.n_primitives,
            radius: self.radius,
            seed: self.seed,
            fraction_moving: self.fraction_moving,
            max_amplitude: self.max_amplitude,
            center: v3(self.center),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSection {
    pub height: f64,
    pub tilt_deg: f64,
    pub n_waypoints: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitSection {
    pub circles: Vec<CircleSection>,
    pub center: [f64; 3],
    pub min_standoff: f64,
    pub start_azimuth_deg: f64,
}

impl Default for OrbitSection {
    fn default() -> Self {
        let d = DatasetConfig::default().orbit;
        Self {
            circles: d
                .circles
                .iter()
                .map(|c| CircleSection {
                    height: c.height,
                    tilt_deg: c.tilt_deg,
                    n_waypoints: c.n_waypoints,
                })
                .collect(),
            center: d.center.into(),
            min_standoff: d.min_standoff,
            start_azimuth_deg: round_trip_degrees(d.start_azimuth),
        }
    }
}

impl OrbitSection {
    pub fn to_core(&self) -> OrbitConfig {
        OrbitConfig {
            circles: self
                .circles
                .iter()
                .map(|c| Circle {
                    height: c.height,
                    tilt_deg: c.tilt_deg,
                    n_waypoints: c.n_waypoints,
                })
                .collect(),
            center: v3(self.center),
            min_standoff: self.min_standoff,
            start_azimuth: self.start_azimuth_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    /// Pixels.
    pub focal: f64,
    pub background: [f64; 3],
}

impl Default for CameraSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            width: d.width,
            height: d.height,
            focal: d.focal,
            background: d.background,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub jitter: f64,
    pub scale: f64,
    pub opacity: f64,
    pub seed: u64,
}

impl Default for InitSection {
    fn default() -> Self {
        let d = InitConfig::default();
        Self {
            jitter: d.jitter,
            scale: d.scale,
            opacity: d.opacity,
            seed: d.seed,
        }
    }
}

impl InitSection {
    pub fn to_core(&self) -> InitConfig {
        InitConfig {
            jitter: self.jitter,
            scale: self.scale,
            opacity: self.opacity,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub mean: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Defaults to the step sizes matching `optimizer`.
    pub learning_rates: Option<RatesSection>,
    pub lr_final_factor: f64,
    pub ssim_weight: f64,
    pub prune_opacity: f64,
    pub prune_interval: usize,
    pub near_camera_prune: bool,
    pub prune_depth: f64,
    pub prune_radius: f64,
    pub seed: u64,
    pub warm_start: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        let p = NearCameraPrune::default();
        Self {
            steps: d.steps,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            learning_rates: None,
            lr_final_factor: d.lr_final_factor,
            ssim_weight: d.ssim_weight,
            prune_opacity: d.prune_opacity,
            prune_interval: d.prune_interval,
            near_camera_prune: d.near_camera_prune.is_some(),
            prune_depth: p.z_min,
            prune_radius: p.radius,
            seed: d.seed,
            warm_start: d.warm_start,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, background: [f64; 3]) -> TrainConfig {
        let (optimizer, rates) = match self.optimizer {
            OptimizerKind::Sgd => (Optimizer::Sgd, LearningRates::sgd()),
            OptimizerKind::Momentum => (Optimizer::Momentum { beta: self.momentum }, LearningRates::sgd()),
            OptimizerKind::Adam => (Optimizer::adam(), LearningRates::adam()),
        };
        let learning_rates = self.learning_rates.map_or(rates, |r| LearningRates {
            mean: r.mean,
            rotation: r.rotation,
            scale: r.scale,
            opacity: r.opacity,
            color: r.color,
        });
        TrainConfig {
            steps: self.steps,
            learning_rates,
            lr_final_factor: self.lr_final_factor,
            optimizer,
            ssim_weight: self.ssim_weight,
            prune_opacity: self.prune_opacity,
            prune_interval: self.prune_interval,
            near_camera_prune: self.near_camera_prune.then_some(NearCameraPrune {
                z_min: self.prune_depth,
                radius: self.prune_radius,
            }),
            background,
            seed: self.seed,
            warm_start: self.warm_start,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub levels: usize,
    pub iterations: usize,
    /// Smoothness weight on the 0–255 intensity scale.
    pub alpha: f64,
    pub warps: usize,
    pub downsample: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            levels: d.levels,
            iterations: d.iterations,
            alpha: d.alpha,
            warps: d.warps,
            downsample: d.downsample,
        }
    }
}

impl FlowSection {
    pub fn to_core(&self) -> FlowConfig {
        FlowConfig {
            levels: self.levels,
            iterations: self.iterations,
            alpha: self.alpha,
            warps: self.warps,
            downsample: self.downsample,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanonicalSection {
    pub iterations: usize,
    pub ssim_weight: f64,
}

impl Default for CanonicalSection {
    fn default() -> Self {
        let d = LoopConfig::default();
        Self {
            iterations: d.iterations,
            ssim_weight: d.ssim_weight,
        }
    }
}

impl CanonicalSection {
    pub fn to_core(&self, flow: &FlowSection) -> LoopConfig {
        LoopConfig {
            iterations: self.iterations,
            flow: flow.to_core(),
            ssim_weight: self.ssim_weight,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlightSection {
    pub seed: u64,
    pub dt: f64,
    pub tau: f64,
    pub timeout: f64,
    pub wind_sigma: f64,
    pub wind_tau: f64,
    pub marker_sigma_translation: f64,
    pub marker_sigma_rotation_deg: f64,
    pub dropout: f64,
    pub altitude_noise: f64,
    pub velocity_noise: f64,
    pub yaw_noise: f64,
    pub capture_tolerance: f64,
    pub capture_speed: f64,
    pub capture_yaw_deg: f64,
    pub max_position_std: f64,
    pub start: Option<[f64; 3]>,
    pub k_f: [f64; 3],
    pub k_p: [f64; 3],
    pub k_i: [f64; 3],
    pub integral_clamp: f64,
    pub v_max: f64,
    pub ramp_rate: f64,
    pub k_yaw: f64,
    pub yaw_rate_max: f64,
}

impl Default for FlightSection {
    fn default() -> Self {
        let d = FlightConfig::default();
        let g = d.gains;
        Self {
            seed: 0,
            dt: d.dt,
            tau: d.tau,
            timeout: d.timeout,
            wind_sigma: d.wind.sigma,
            wind_tau: d.wind.tau,
            marker_sigma_translation: d.noise.markers.sigma_translation,
            marker_sigma_rotation_deg: round_trip_degrees(d.noise.markers.sigma_rotation),
            dropout: d.noise.markers.dropout_prob,
            altitude_noise: d.noise.altitude,
            velocity_noise: d.noise.velocity,
            yaw_noise: d.noise.yaw,
            capture_tolerance: d.capture_tolerance,
            capture_speed: d.capture_speed,
            capture_yaw_deg: round_trip_degrees(d.capture_yaw),
            max_position_std: d.max_position_std,
            start: d.start.map(Into::into),
            k_f: g.k_f.into(),
            k_p: g.k_p.into(),
            k_i: g.k_i.into(),
            integral_clamp: g.integral_clamp,
            v_max: g.v_max,
            ramp_rate: g.ramp_rate,
            k_yaw: g.k_yaw,
            yaw_rate_max: g.yaw_rate_max,
        }
    }
}

impl FlightSection {
    pub fn to_core(&self, intrinsics: CameraIntrinsics) -> FlightConfig {
        let d = FlightConfig::default();
        FlightConfig {
            dt: self.dt,
            tau: self.tau,
            gains: ControllerGains {
                k_f: v3(self.k_f),
                k_p: v3(self.k_p),
                k_i: v3(self.k_i),
                integral_clamp: self.integral_clamp,
                v_max: self.v_max,
                ramp_rate: self.ramp_rate,
                k_yaw: self.k_yaw,
                yaw_rate_max: self.yaw_rate_max,
            },
            wind: WindConfig {
                sigma: self.wind_sigma,
                tau: self.wind_tau,
            },
            noise: SensorNoise {
                markers: ObservationNoise {
                    sigma_translation: self.marker_sigma_translation,
                    sigma_rotation: self.marker_sigma_rotation_deg.to_radians(),
                    dropout_prob: self.dropout,
                },
                altitude: self.altitude_noise,
                velocity: self.velocity_noise,
                yaw: self.yaw_noise,
            },
            sensor: d.sensor,
            timeout: self.timeout,
            capture_tolerance: self.capture_tolerance,
            capture_speed: self.capture_speed,
            capture_yaw: self.capture_yaw_deg.to_radians(),
            max_position_std: self.max_position_std,
            process_noise: d.process_noise,
            initial_std: d.initial_std,
            start: self.start.map(v3),
            intrinsics,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkerSection {
    pub count: usize,
    pub radius: f64,
    pub side: f64,
    pub center: [f64; 3],
}

impl Default for MarkerSection {
    fn default() -> Self {
        Self {
            count: 4,
            radius: 0.35,
            side: 0.15,
            center: [0.0; 3],
        }
    }
}

impl MarkerSection {
    pub fn board(&self) -> Result<MarkerBoard> {
        Ok(MarkerBoard::ring(self.count, v3(self.center), self.radius, self.side)?)
    }
}
