//! Per-pixel splat rasterization and its analytic vector-Jacobian product.
//!
//! Each primitive is projected once per camera (EWA footprint), sorted by
//! camera-space depth with ties broken by primitive index, and composited
//! front to back at every pixel. The backward pass replays the same per-pixel
//! compositing and accumulates gradients row by row; rows are reduced in a fixed
//! order so results do not depend on the thread count.

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

use crate::geometry::{Camera, Mat3, Vec2, Vec3};
use crate::image::{ImageBuffer, Rgb};

use super::primitive::{rotation_from_raw, GaussianScene, PARAMS_PER_PRIMITIVE};

/// Primitives closer than this (camera-space z, meters) are skipped.
pub const NEAR_PLANE: f64 = 1e-4;
/// Upper bound on per-pixel alpha.
pub const MAX_ALPHA: f64 = 0.99;
/// Compositing stops before transmittance would drop below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Screen-space variance (px²) added to every projected footprint.
pub const SCREEN_DILATION: f64 = 0.3;
/// Squared Mahalanobis radius beyond which a footprint is treated as zero
/// (the Gaussian falls below 1e-10 there).
const MAX_MAHALANOBIS_SQ: f64 = 46.0;

/// Gradient of a scalar loss with respect to every primitive parameter, laid
/// out like [`GaussianPrimitive::params`](super::GaussianPrimitive::params).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub per_primitive: Vec<[f64; PARAMS_PER_PRIMITIVE]>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            per_primitive: vec![[0.0; PARAMS_PER_PRIMITIVE]; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.per_primitive.iter().flatten().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &SceneGradients) {
        for (a, b) in self.per_primitive.iter_mut().zip(&other.per_primitive) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// A primitive's screen-space footprint plus what the backward pass needs.
#[derive(Debug, Clone)]
struct Splat {
    index: usize,
    depth: f64,
    mean2d: Vec2,
    /// Inverse of the 2D covariance, `[a, b, c]` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    color: Rgb,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

fn project_splat(scene: &GaussianScene, index: usize, cam: &Camera) -> Option<Splat> {
    let prim = &scene.primitives[index];
    let k = &cam.intrinsics;
    let w = cam.world_to_cam.rotation_matrix();
    let t = cam.world_to_cam.transform_point(&prim.mean);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let mean2d = Vec2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy);
    let j = perspective_jacobian(k.fx, k.fy, &t);
    let tw = j * w;
    let cov2 = tw * prim.covariance() * tw.transpose() + Matrix2::identity() * SCREEN_DILATION;
    let (p, q, r) = (cov2[(0, 0)], cov2[(0, 1)], cov2[(1, 1)]);
    let det = p * r - q * q;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [r / det, -q / det, p / det];
    let half = 0.5 * (p + r);
    let lambda_max = half + (0.25 * (p - r) * (p - r) + q * q).sqrt();
    let extent = (MAX_MAHALANOBIS_SQ * lambda_max).sqrt();
    let x_range = (mean2d.x - extent, mean2d.x + extent);
    let y_range = (mean2d.y - extent, mean2d.y + extent);
    if x_range.1 < 0.0 || y_range.1 < 0.0 || x_range.0 > (k.width - 1) as f64 || y_range.0 > (k.height - 1) as f64 {
        return None;
    }
    Some(Splat {
        index,
        depth: t.z,
        mean2d,
        conic,
        opacity: prim.opacity(),
        color: prim.color,
        x_range,
        y_range,
    })
}

fn perspective_jacobian(fx: f64, fy: f64, t: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(fx * iz, 0.0, -fx * t.x * iz2, 0.0, fy * iz, -fy * t.y * iz2)
}

/// Projects and depth-sorts all visible primitives.
fn sorted_splats(scene: &GaussianScene, cam: &Camera) -> Vec<Splat> {
    let mut splats: Vec<Splat> = (0..scene.len())
        .filter_map(|i| project_splat(scene, i, cam))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

/// One primitive's contribution at one pixel.
struct Fragment {
    slot: usize,
    alpha: f64,
    gauss: f64,
    clamped: bool,
    transmittance: f64,
    dx: f64,
    dy: f64,
}

/// Composites one pixel, recording the contributing fragments when asked.
/// Returns the color and the final transmittance.
fn shade_pixel(
    splats: &[Splat],
    row: &[usize],
    x: f64,
    y: f64,
    background: &Rgb,
    mut fragments: Option<&mut Vec<Fragment>>,
) -> (Rgb, f64) {
    let mut color = [0.0; 3];
    let mut trans = 1.0;
    for &slot in row {
        let s = &splats[slot];
        if x < s.x_range.0 || x > s.x_range.1 {
            continue;
        }
        let dx = x - s.mean2d.x;
        let dy = y - s.mean2d.y;
        let [a, b, c] = s.conic;
        let maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if maha > MAX_MAHALANOBIS_SQ {
            continue;
        }
        let gauss = (-0.5 * maha).exp();
        let raw = s.opacity * gauss;
        let clamped = raw > MAX_ALPHA;
        let alpha = if clamped { MAX_ALPHA } else { raw };
        let next = trans * (1.0 - alpha);
        if next < MIN_TRANSMITTANCE {
            break;
        }
        for ch in 0..3 {
            color[ch] += s.color[ch] * alpha * trans;
        }
        if let Some(f) = fragments.as_deref_mut() {
            f.push(Fragment {
                slot,
                alpha,
                gauss,
                clamped,
                transmittance: trans,
                dx,
                dy,
            });
        }
        trans = next;
    }
    for ch in 0..3 {
        color[ch] += trans * background[ch];
    }
    (color, trans)
}

/// Splat indices (into the sorted list) whose vertical extent covers row `y`.
fn row_splats(splats: &[Splat], y: f64, out: &mut Vec<usize>) {
    out.clear();
    out.extend(
        splats
            .iter()
            .enumerate()
            .filter(|(_, s)| y >= s.y_range.0 && y <= s.y_range.1)
            .map(|(i, _)| i),
    );
}

/// Renders `scene` from `cam` over a uniform `background`.
pub fn render(scene: &GaussianScene, cam: &Camera, background: Rgb) -> ImageBuffer {
    let k = &cam.intrinsics;
    let (w, h) = (k.width, k.height);
    let splats = sorted_splats(scene, cam);
    let mut data = vec![0.0; w * h * 3];
    data.par_chunks_mut(w * 3).enumerate().for_each(|(yi, row_out)| {
        let y = yi as f64;
        let mut row = Vec::new();
        row_splats(&splats, y, &mut row);
        for xi in 0..w {
            let (c, _) = shade_pixel(&splats, &row, xi as f64, y, &background, None);
            row_out[xi * 3..xi * 3 + 3].copy_from_slice(&c);
        }
    });
    ImageBuffer::from_raw(w, h, data).expect("buffer sized from intrinsics")
}

/// Per-pixel accumulated opacity (`1 - final transmittance`).
pub fn render_alpha(scene: &GaussianScene, cam: &Camera) -> Vec<f64> {
    let k = &cam.intrinsics;
    let splats = sorted_splats(scene, cam);
    let mut out = vec![0.0; k.width * k.height];
    out.par_chunks_mut(k.width).enumerate().for_each(|(yi, row_out)| {
        let y = yi as f64;
        let mut row = Vec::new();
        row_splats(&splats, y, &mut row);
        for (xi, o) in row_out.iter_mut().enumerate() {
            let (_, t) = shade_pixel(&splats, &row, xi as f64, y, &[0.0; 3], None);
            *o = 1.0 - t;
        }
    });
    out
}

/// Screen-space gradient of one splat: mean2d (2), conic (3), opacity, color (3).
type ScreenGrad = [f64; 9];

/// Vector-Jacobian product of [`render`]: given `dl_dimage` (the gradient of a
/// scalar loss with respect to every output channel), returns the gradient with
/// respect to every primitive parameter.
pub fn render_gradients(
    scene: &GaussianScene,
    cam: &Camera,
    background: Rgb,
    dl_dimage: &ImageBuffer,
) -> SceneGradients {
    let k = &cam.intrinsics;
    let (w, h) = (k.width, k.height);
    assert_eq!(dl_dimage.dims(), (w, h), "gradient image must match the camera");
    let splats = sorted_splats(scene, cam);
    let n = splats.len();

    let row_grads: Vec<Vec<ScreenGrad>> = (0..h)
        .into_par_iter()
        .map(|yi| {
            let y = yi as f64;
            let mut grads = vec![[0.0; 9]; n];
            let mut row = Vec::new();
            row_splats(&splats, y, &mut row);
            if row.is_empty() {
                return grads;
            }
            let mut frags = Vec::new();
            for xi in 0..w {
                let g = dl_dimage.pixel(xi, yi);
                if g == [0.0; 3] {
                    continue;
                }
                frags.clear();
                let (_, t_final) = shade_pixel(&splats, &row, xi as f64, y, &background, Some(&mut frags));
                // Color contributed by everything behind the current fragment.
                let mut behind = [
                    t_final * background[0],
                    t_final * background[1],
                    t_final * background[2],
                ];
                for f in frags.iter().rev() {
                    let s = &splats[f.slot];
                    let sg = &mut grads[f.slot];
                    let weight = f.alpha * f.transmittance;
                    let mut dl_dalpha = 0.0;
                    for ch in 0..3 {
                        sg[6 + ch] += weight * g[ch];
                        dl_dalpha += g[ch] * (f.transmittance * s.color[ch] - behind[ch] / (1.0 - f.alpha));
                        behind[ch] += s.color[ch] * weight;
                    }
                    if f.clamped {
                        continue;
                    }
                    // alpha = opacity * exp(power), power = -1/2 dᵀ A d, d = pixel - mean.
                    sg[5] += dl_dalpha * f.gauss;
                    let dl_dpower = dl_dalpha * f.alpha;
                    let [a, b, c] = s.conic;
                    sg[0] += dl_dpower * (a * f.dx + b * f.dy);
                    sg[1] += dl_dpower * (b * f.dx + c * f.dy);
                    sg[2] += dl_dpower * (-0.5 * f.dx * f.dx);
                    sg[3] += dl_dpower * (-f.dx * f.dy);
                    sg[4] += dl_dpower * (-0.5 * f.dy * f.dy);
                }
            }
            grads
        })
        .collect();

    let mut screen = vec![[0.0; 9]; n];
    for rg in &row_grads {
        for (acc, g) in screen.iter_mut().zip(rg) {
            for (x, y) in acc.iter_mut().zip(g) {
                *x += y;
            }
        }
    }

    let mut out = SceneGradients::zeros(scene.len());
    for (s, sg) in splats.iter().zip(&screen) {
        out.per_primitive[s.index] = backprop_projection(scene, s.index, cam, sg);
    }
    out
}

/// Chains screen-space gradients back to the primitive's parameters.
fn backprop_projection(
    scene: &GaussianScene,
    index: usize,
    cam: &Camera,
    sg: &ScreenGrad,
) -> [f64; PARAMS_PER_PRIMITIVE] {
    let prim = &scene.primitives[index];
    let k = &cam.intrinsics;
    let w = cam.world_to_cam.rotation_matrix();
    let t = cam.world_to_cam.transform_point(&prim.mean);
    let j = perspective_jacobian(k.fx, k.fy, &t);
    let tw = j * w;

    let rot = rotation_from_raw(&prim.rotation);
    let scale = prim.scale();
    let m = rot * Mat3::from_diagonal(&scale);
    let cov3 = m * m.transpose();
    let cov2 = tw * cov3 * tw.transpose() + Matrix2::identity() * SCREEN_DILATION;
    let conic = cov2.try_inverse().expect("projected footprint is invertible");

    // Conic gradient as a symmetric matrix; b appears in both off-diagonals.
    let g_conic = Matrix2::new(sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4]);
    let g_cov2 = -(conic * g_conic * conic);
    let g_cov3 = tw.transpose() * g_cov2 * tw;
    let g_tw: Matrix2x3<f64> = 2.0 * g_cov2 * tw * cov3;
    let g_j = g_tw * w.transpose();

    let g_mean2d = Vector2::new(sg[0], sg[1]);
    let mut g_t: Vec3 = j.transpose() * g_mean2d;
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    g_t.x += g_j[(0, 2)] * (-k.fx * iz2);
    g_t.y += g_j[(1, 2)] * (-k.fy * iz2);
    g_t.z += g_j[(0, 0)] * (-k.fx * iz2)
        + g_j[(0, 2)] * (2.0 * k.fx * t.x * iz3)
        + g_j[(1, 1)] * (-k.fy * iz2)
        + g_j[(1, 2)] * (2.0 * k.fy * t.y * iz3);
    let g_mean = w.transpose() * g_t;

    // cov3 = M Mᵀ, M = R diag(s).
    let g_m = 2.0 * g_cov3 * m;
    let mut g_rot = Mat3::zeros();
    let mut g_log_scale = Vec3::zeros();
    for col in 0..3 {
        let mut gs = 0.0;
        for row in 0..3 {
            g_rot[(row, col)] = g_m[(row, col)] * scale[col];
            gs += g_m[(row, col)] * rot[(row, col)];
        }
        g_log_scale[col] = gs * scale[col];
    }
    let g_quat = quaternion_gradient(&prim.rotation, &g_rot);

    let opacity = prim.opacity();
    let mut out = [0.0; PARAMS_PER_PRIMITIVE];
    out[0..3].copy_from_slice(g_mean.as_slice());
    out[3..7].copy_from_slice(&g_quat);
    out[7..10].copy_from_slice(g_log_scale.as_slice());
    out[10] = sg[5] * opacity * (1.0 - opacity);
    out[11..14].copy_from_slice(&sg[6..9]);
    out
}

/// Gradient with respect to the raw quaternion given the gradient with
/// respect to the rotation matrix it produces after normalization.
fn quaternion_gradient(raw: &[f64; 4], g_rot: &Mat3) -> [f64; 4] {
    let n = (raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let (w, x, y, z) = (raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n);
    let d_w = Mat3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let d_x = Mat3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let d_y = Mat3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let d_z = Mat3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    let g_unit = [
        g_rot.component_mul(&d_w).sum(),
        g_rot.component_mul(&d_x).sum(),
        g_rot.component_mul(&d_y).sum(),
        g_rot.component_mul(&d_z).sum(),
    ];
    let unit = [w, x, y, z];
    let radial: f64 = unit.iter().zip(&g_unit).map(|(u, g)| u * g).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (g_unit[i] - unit[i] * radial) / n;
    }
    out
}
