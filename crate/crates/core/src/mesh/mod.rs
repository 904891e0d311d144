//! Geometry extraction from a trained scene: radius crop, opacity
//! voxelization, isosurfacing and file export.

mod marching;
mod obj;

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::Rgb;
use crate::splat::GaussianScene;

pub use marching::{marching_cubes, TriMesh};
pub use obj::{export_obj, import_obj, read_obj, write_obj};

/// Keeps the primitives whose mean lies in the closed ball of radius `r`.
pub fn crop_scene(scene: &GaussianScene, center: &Vec3, r: f64) -> Result<GaussianScene> {
    if !(r > 0.0) {
        return Err(Error::InvalidConfig(format!("crop radius must be positive, got {r}")));
    }
    Ok(GaussianScene::new(
        scene
            .primitives
            .iter()
            .filter(|p| (p.mean - center).norm() <= r)
            .cloned()
            .collect(),
    ))
}

/// Sample lattice: `dims` samples per axis at voxel centers inside `min..max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub min: Vec3,
    pub max: Vec3,
}

impl GridSpec {
    /// Cube around a crop ball, inflated by 10 %.
    pub fn around(center: &Vec3, r: f64, resolution: usize) -> Self {
        let h = Vec3::repeat(r * 1.1);
        Self {
            dims: [resolution; 3],
            min: center - h,
            max: center + h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidConfig(format!("grid needs at least 2 samples per axis, got {:?}", self.dims)));
        }
        if (0..3).any(|i| !(self.max[i] > self.min[i]) || !self.min[i].is_finite() || !self.max[i].is_finite()) {
            return Err(Error::InvalidConfig("grid bounds must be finite with max > min".into()));
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.max - self.min;
        Vec3::new(
            e.x / self.dims[0] as f64,
            e.y / self.dims[1] as f64,
            e.z / self.dims[2] as f64,
        )
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.voxel_size();
        self.min + Vec3::new((i as f64 + 0.5) * s.x, (j as f64 + 0.5) * s.y, (k as f64 + 0.5) * s.z)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    /// x fastest, then y, then z.
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn from_fn(spec: GridSpec, f: impl Fn(&Vec3) -> f64 + Sync) -> Result<Self> {
        spec.validate()?;
        let [nx, ny, _] = spec.dims;
        let values = (0..spec.len())
            .into_par_iter()
            .map(|idx| f(&spec.position(idx % nx, (idx / nx) % ny, idx / (nx * ny))))
            .collect();
        Ok(Self { spec, values })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.spec.dims;
        i + nx * (j + ny * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Mahalanobis radius beyond which a primitive is ignored.
const CUTOFF_SIGMA: f64 = 3.0;

struct Footprint {
    mean: Vec3,
    precision: nalgebra::Matrix3<f64>,
    opacity: f64,
    color: Rgb,
    lo: Vec3,
    hi: Vec3,
}

fn footprints(scene: &GaussianScene) -> Vec<Footprint> {
    scene
        .primitives
        .iter()
        .filter_map(|p| {
            let cov = p.covariance();
            let precision = cov.try_inverse()?;
            let half = Vec3::new(cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()) * CUTOFF_SIGMA;
            Some(Footprint {
                mean: p.mean,
                precision,
                opacity: p.opacity(),
                color: p.color,
                lo: p.mean - half,
                hi: p.mean + half,
            })
        })
        .collect()
}

impl Footprint {
    fn weight(&self, x: &Vec3) -> Option<f64> {
        if (0..3).any(|i| x[i] < self.lo[i] || x[i] > self.hi[i]) {
            return None;
        }
        let d = x - self.mean;
        let m = d.dot(&(self.precision * d));
        (m <= CUTOFF_SIGMA * CUTOFF_SIGMA + 1e-9).then(|| self.opacity * (-0.5 * m).exp())
    }
}

/// Summed, saturating opacity density of the scene sampled on `spec`.
pub fn opacity_grid(scene: &GaussianScene, spec: &GridSpec) -> Result<VoxelGrid> {
    let fps = footprints(scene);
    VoxelGrid::from_fn(*spec, |x| fps.iter().filter_map(|f| f.weight(x)).sum::<f64>().min(1.0))
}

/// Opacity-weighted mean primitive color at each vertex; black where no
/// primitive reaches.
pub fn vertex_colors(scene: &GaussianScene, vertices: &[Vec3]) -> Vec<Rgb> {
    let fps = footprints(scene);
    vertices
        .par_iter()
        .map(|x| {
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for f in &fps {
                if let Some(w) = f.weight(x) {
                    total += w;
                    for c in 0..3 {
                        acc[c] += w * f.color[c];
                    }
                }
            }
            if total > 0.0 {
                acc.map(|v| (v / total).clamp(0.0, 1.0))
            } else {
                [0.0; 3]
            }
        })
        .collect()
}

/// Raw grid dump: one text line `VOX1 nx ny nz minx miny minz maxx maxy maxz`
/// followed by little-endian f32 values, x fastest.
pub fn write_vox<W: Write>(grid: &VoxelGrid, mut out: W) -> std::io::Result<()> {
    let s = &grid.spec;
    writeln!(
        out,
        "VOX1 {} {} {} {} {} {} {} {} {}",
        s.dims[0], s.dims[1], s.dims[2], s.min.x, s.min.y, s.min.z, s.max.x, s.max.y, s.max.z
    )?;
    let mut bytes = Vec::with_capacity(grid.values.len() * 4);
    for v in &grid.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&bytes)
}

pub fn read_vox<R: Read>(mut input: R) -> Result<VoxelGrid> {
    let mut all = Vec::new();
    input
        .read_to_end(&mut all)
        .map_err(|e| Error::io("<vox stream>", e))?;
    let bad = |m: &str| Error::format("<vox stream>", m.to_string());
    let nl = all.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&all[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 10 || fields[0] != "VOX1" {
        return Err(bad("expected `VOX1 nx ny nz minx miny minz maxx maxy maxz`"));
    }
    let dims: Vec<usize> = fields[1..4]
        .iter()
        .map(|s| s.parse().map_err(|_| bad("bad grid size")))
        .collect::<Result<_>>()?;
    let b: Vec<f64> = fields[4..]
        .iter()
        .map(|s| s.parse().map_err(|_| bad("bad bounds")))
        .collect::<Result<_>>()?;
    let spec = GridSpec {
        dims: [dims[0], dims[1], dims[2]],
        min: Vec3::new(b[0], b[1], b[2]),
        max: Vec3::new(b[3], b[4], b[5]),
    };
    spec.validate()?;
    let body = &all[nl + 1..];
    if body.len() != spec.len() * 4 {
        return Err(bad("payload size does not match grid dimensions"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(VoxelGrid { spec, values })
}
