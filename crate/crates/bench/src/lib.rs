//! Fixtures shared by the criterion benches in `benches/`.

use canonica_core::capture::{plan_orbits, FlightConfig, MarkerBoard, OrbitConfig, Waypoint, WindConfig};
use canonica_core::mesh::{opacity_grid, GridSpec, VoxelGrid};
use canonica_core::synth::{generate, initial_scene, BenchmarkSetup, SyntheticDataset};
use canonica_core::{GaussianScene, Vec3};

pub struct Fixture {
    pub setup: BenchmarkSetup,
    pub data: SyntheticDataset,
    pub init: GaussianScene,
}

/// The frozen benchmark dataset and its initial scene.
pub fn benchmark() -> Fixture {
    let setup = BenchmarkSetup::frozen();
    let data = generate(&setup.dataset).expect("benchmark dataset");
    let init = initial_scene(&data.truth.scene, &setup.init).expect("initial scene");
    Fixture { setup, data, init }
}

pub fn plant_grid(fx: &Fixture, resolution: usize) -> VoxelGrid {
    let spec = GridSpec::around(&Vec3::zeros(), 0.5, resolution);
    opacity_grid(&fx.data.truth.scene, &spec).expect("grid")
}

/// Board, plan and a windy, lossy flight configuration.
pub fn flight() -> (MarkerBoard, Vec<Waypoint>, FlightConfig) {
    let board = MarkerBoard::ring(4, Vec3::zeros(), 0.35, 0.15).expect("board");
    let plan = plan_orbits(&OrbitConfig::default()).expect("plan");
    let mut cfg = FlightConfig {
        wind: WindConfig { sigma: 0.3, tau: 2.0 },
        ..FlightConfig::default()
    };
    cfg.noise.markers.dropout_prob = 0.2;
    (board, plan, cfg)
}
