//! Marching cubes over a voxel grid.
//!
//! The 256-case triangle table is derived at first use instead of being
//! transcribed: on every cube face the iso-crossings are joined so that the
//! inside corners stay separated, the resulting segments close into loops,
//! and each loop is fanned into triangles. Neighbouring cells make the same
//! choice on their shared face, so the surface is watertight.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::Rgb;

use super::VoxelGrid;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise seen from outside.
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<Rgb>>,
}

impl TriMesh {
    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// V − E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Every directed edge used once and its reverse used once.
    pub fn is_closed_oriented(&self) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Indices in range and no triangle repeating a vertex.
    pub fn is_valid(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.triangles
            .iter()
            .all(|t| t.iter().all(|&i| i < n) && t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            && self.colors.as_ref().is_none_or(|c| c.len() == self.vertices.len())
    }

    /// Signed enclosed volume; positive for outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as (low corner, axis).
fn cube_edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    for c in 0..8 {
        for axis in 0..3 {
            if c & (1 << axis) == 0 {
                out[n] = (c, axis);
                n += 1;
            }
        }
    }
    out
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    cube_edges()
        .iter()
        .position(|&e| e == (lo, axis))
        .expect("corners differ in exactly one bit")
}

/// Face corner cycles, counter-clockwise about the outward normal.
fn cube_faces() -> Vec<[usize; 4]> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (u, v) = (1 << ((axis + 1) % 3), 1 << ((axis + 2) % 3));
        for side in 0..2 {
            let base = side << axis;
            let mut cycle = [base, base | u, base | u | v, base | v];
            if side == 0 {
                cycle.reverse();
            }
            faces.push(cycle);
        }
    }
    faces
}

fn build_case(mask: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask & (1 << c) != 0;
    let mut next: HashMap<usize, usize> = HashMap::new();
    for cycle in cube_faces() {
        // (edge, is_entry) in cycle order.
        let crossings: Vec<(usize, bool)> = (0..4)
            .filter_map(|k| {
                let (a, b) = (cycle[k], cycle[(k + 1) % 4]);
                (inside(a) != inside(b)).then(|| (edge_between(a, b), !inside(a)))
            })
            .collect();
        for (i, &(edge, entry)) in crossings.iter().enumerate() {
            if entry {
                let (exit, _) = crossings[(i + 1) % crossings.len()];
                next.insert(edge, exit);
            }
        }
    }
    let mut tris = Vec::new();
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut used = [false; 12];
    for s in starts {
        if used[s] {
            continue;
        }
        let mut ring = vec![s];
        used[s] = true;
        let mut e = next[&s];
        while e != s {
            used[e] = true;
            ring.push(e);
            e = next[&e];
        }
        for i in 1..ring.len() - 1 {
            tris.push([ring[0] as u8, ring[i] as u8, ring[i + 1] as u8]);
        }
    }
    tris
}

/// Triangles, as cube-edge triples, for each inside-corner mask.
pub fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

/// Isosurface of `grid` at `iso`. Samples strictly above `iso` are inside;
/// triangles face away from them.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> Result<TriMesh> {
    let [nx, ny, nz] = grid.spec.dims;
    let table = case_table();
    let edges = cube_edges();

    // Per cell layer, the welded-edge keys of every triangle, in cell order.
    let keyed: Vec<Vec<[usize; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut mask = 0;
                    for c in 0..8 {
                        let [dx, dy, dz] = corner_offset(c);
                        if grid.get(i + dx, j + dy, k + dz) > iso {
                            mask |= 1 << c;
                        }
                    }
                    for tri in &table[mask] {
                        out.push(tri.map(|e| {
                            let (c, axis) = edges[e as usize];
                            let [dx, dy, dz] = corner_offset(c);
                            grid.index(i + dx, j + dy, k + dz) * 3 + axis
                        }));
                    }
                }
            }
            out
        })
        .collect();

    let mut index: HashMap<usize, u32> = HashMap::new();
    let mut mesh = TriMesh::default();
    for tri in keyed.into_iter().flatten() {
        let ids = tri.map(|key| {
            *index.entry(key).or_insert_with(|| {
                mesh.vertices.push(edge_vertex(grid, key, iso));
                (mesh.vertices.len() - 1) as u32
            })
        });
        mesh.triangles.push(ids);
    }
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyIsosurface { iso });
    }
    Ok(mesh)
}

fn edge_vertex(grid: &VoxelGrid, key: usize, iso: f64) -> Vec3 {
    let [nx, ny, _] = grid.spec.dims;
    let (point, axis) = (key / 3, key % 3);
    let (i, j, k) = (point % nx, (point / nx) % ny, point / (nx * ny));
    let mut o = [i, j, k];
    o[axis] += 1;
    let (va, vb) = (grid.values[point], grid.get(o[0], o[1], o[2]));
    let t = if vb != va { ((iso - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
    let (pa, pb) = (grid.spec.position(i, j, k), grid.spec.position(o[0], o[1], o[2]));
    pa + (pb - pa) * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{opacity_grid, GridSpec};
    use crate::splat::{GaussianPrimitive, GaussianScene};

    fn gaussian_grid(res: usize) -> VoxelGrid {
        let peak = 0.9;
        let scene = GaussianScene::new(vec![GaussianPrimitive::isotropic(Vec3::zeros(), 0.1, peak, [1.0; 3])]);
        opacity_grid(&scene, &GridSpec::around(&Vec3::zeros(), 0.35, res)).unwrap()
    }

    #[test]
    fn table_basics() {
        let t = case_table();
        assert_eq!(t.len(), 256);
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        // Four corners of one face inside: a single quad.
        assert_eq!(t[0b0101_0101].len(), 2);
        // Opposite corners on a face: kept apart, two corner triangles.
        assert_eq!(t[0b0000_1001].len(), 2);
        assert!(t.iter().all(|c| c.len() <= 12));
    }

    #[test]
    fn corner_triangle_faces_away_from_inside() {
        let tri = case_table()[1][0];
        let mid = |e: u8| {
            let (c, axis) = cube_edges()[e as usize];
            let mut p = corner_offset(c).map(|v| v as f64);
            p[axis] += 0.5;
            Vec3::from(p)
        };
        let [a, b, c] = tri.map(mid);
        let n = (b - a).cross(&(c - a));
        assert!(n.dot(&Vec3::repeat(1.0)) > 0.0);
    }

    #[test]
    fn gaussian_blob_is_a_sphere_topologically() {
        let mesh = marching_cubes(&gaussian_grid(32), 0.5).unwrap();
        assert!(mesh.is_valid());
        assert!(mesh.is_closed_oriented());
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn uniform_grid_has_no_surface() {
        let g = VoxelGrid::from_fn(GridSpec::around(&Vec3::zeros(), 1.0, 8), |_| 0.2).unwrap();
        assert!(matches!(marching_cubes(&g, 0.5), Err(Error::EmptyIsosurface { .. })));
    }

    #[test]
    fn analytic_sphere_radius() {
        let radius = 0.6;
        let spec = GridSpec::around(&Vec3::zeros(), 1.0, 64);
        let voxel = spec.voxel_size().x;
        let g = VoxelGrid::from_fn(spec, |p| 1.0 / (1.0 + ((p.norm() - radius) / voxel).exp())).unwrap();
        let mesh = marching_cubes(&g, 0.5).unwrap();
        let mean = mesh.vertices.iter().map(|v| (v.norm() - radius).abs()).sum::<f64>() / mesh.vertices.len() as f64;
        assert!(mean < 1.5 * voxel, "mean deviation {mean}, voxel {voxel}");
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn vertex_count_grows_with_resolution() {
        let counts: Vec<usize> = [32, 64, 128]
            .iter()
            .map(|&r| marching_cubes(&gaussian_grid(r), 0.5).unwrap().vertices.len())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }

    #[test]
    fn two_blobs_two_components() {
        let scene = GaussianScene::new(vec![
            GaussianPrimitive::isotropic(Vec3::new(-0.3, 0.0, 0.0), 0.08, 0.9, [1.0; 3]),
            GaussianPrimitive::isotropic(Vec3::new(0.3, 0.0, 0.0), 0.08, 0.9, [1.0; 3]),
        ]);
        let g = opacity_grid(&scene, &GridSpec::around(&Vec3::zeros(), 0.6, 40)).unwrap();
        let mesh = marching_cubes(&g, 0.5).unwrap();
        assert!(mesh.is_closed_oriented());
        assert_eq!(mesh.euler_characteristic(), 4);
    }

    #[test]
    fn deterministic_output() {
        let g = gaussian_grid(48);
        assert_eq!(marching_cubes(&g, 0.5).unwrap(), marching_cubes(&g, 0.5).unwrap());
    }
}
