//! Coarse-to-fine Horn–Schunck with intermediate warping.

use crate::geometry::Vec2;
use crate::image::GrayImage;

use super::{FlowConfig, FlowField};

/// Images are in `[0, 1]`; the smoothness weight is specified on the 0–255 scale.
const INTENSITY_SCALE: f64 = 255.0;

/// Smallest pyramid side length worth estimating on.
const MIN_LEVEL_SIZE: usize = 8;

/// Flow from `src` to `dst` on `src`'s grid (same resolution as the inputs).
pub fn horn_schunck_pyramid(src: &GrayImage, dst: &GrayImage, cfg: &FlowConfig) -> FlowField {
    let mut pyramid = vec![(src.clone(), dst.clone())];
    while pyramid.len() < cfg.levels {
        let (a, b) = pyramid.last().expect("non-empty");
        if a.width.div_ceil(2) < MIN_LEVEL_SIZE || a.height.div_ceil(2) < MIN_LEVEL_SIZE {
            break;
        }
        pyramid.push((pyr_down(a), pyr_down(b)));
    }

    let (coarsest, _) = pyramid.last().expect("non-empty");
    let mut flow = FlowField::zeros(coarsest.width, coarsest.height);
    for (level, (a, b)) in pyramid.iter().enumerate().rev() {
        if (flow.width(), flow.height()) != (a.width, a.height) {
            flow = flow.resize(a.width, a.height);
        }
        for _ in 0..cfg.warps.max(1) {
            flow = refine(a, b, &flow, cfg.alpha, cfg.iterations);
        }
        log::trace!("flow level {level}: {}x{}", a.width, a.height);
    }
    flow
}

/// Halves each side with a [1 3 3 1]/8 binomial filter, which keeps block
/// centers where a 2x2 average would put them but suppresses aliasing.
fn pyr_down(img: &GrayImage) -> GrayImage {
    const TAPS: [(isize, f64); 4] = [(-1, 0.125), (0, 0.375), (1, 0.375), (2, 0.125)];
    let (w, h) = (img.width.div_ceil(2), img.height.div_ceil(2));
    let rows = GrayImage::from_fn(w, img.height, |x, y| {
        TAPS.iter().map(|&(d, k)| k * img.get_clamped(2 * x as isize + d, y as isize)).sum()
    });
    GrayImage::from_fn(w, h, |x, y| {
        TAPS.iter().map(|&(d, k)| k * rows.get_clamped(x as isize, 2 * y as isize + d)).sum()
    })
}

fn warp(img: &GrayImage, flow: &FlowField) -> GrayImage {
    GrayImage::from_fn(img.width, img.height, |x, y| {
        let f = flow.get(x, y);
        img.sample_bilinear(x as f64 + f.x, y as f64 + f.y)
    })
}

fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            gx[y * w + x] = 0.5 * (img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi));
            gy[y * w + x] = 0.5 * (img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1));
        }
    }
    (gx, gy)
}

/// One warp: linearize around `init` and run Jacobi iterations on the total flow.
fn refine(src: &GrayImage, dst: &GrayImage, init: &FlowField, alpha: f64, iterations: usize) -> FlowField {
    let (w, h) = (src.width, src.height);
    let warped = warp(dst, init);
    let (sx, sy) = gradients(src);
    let (wx, wy) = gradients(&warped);
    let n = w * h;
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    // Residual of the data term expressed against the total flow:
    // Ix·u + Iy·v + rhs = 0 with rhs = It - Ix·u0 - Iy·v0.
    let mut rhs = vec![0.0; n];
    let mut denom = vec![0.0; n];
    let a2 = (alpha / INTENSITY_SCALE).powi(2);
    for i in 0..n {
        let f0 = init.vectors()[i];
        let (px, py) = ((i % w) as f64 + f0.x, (i / w) as f64 + f0.y);
        if px < 0.0 || py < 0.0 || px > (w - 1) as f64 || py > (h - 1) as f64 {
            // Warped off the image: leave the pixel to the smoothness term.
            denom[i] = a2;
            continue;
        }
        ix[i] = 0.5 * (sx[i] + wx[i]);
        iy[i] = 0.5 * (sy[i] + wy[i]);
        let it = warped.data[i] - src.data[i];
        rhs[i] = it - ix[i] * f0.x - iy[i] * f0.y;
        denom[i] = a2 + ix[i] * ix[i] + iy[i] * iy[i];
    }

    let mut cur: Vec<Vec2> = init.vectors().to_vec();
    let mut next = cur.clone();
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let avg = neighbourhood_mean(&cur, w, h, x, y);
                let i = y * w + x;
                let t = (ix[i] * avg.x + iy[i] * avg.y + rhs[i]) / denom[i];
                next[i] = Vec2::new(avg.x - ix[i] * t, avg.y - iy[i] * t);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    FlowField::from_vectors(w, h, cur).expect("sized from the source grid")
}

/// Horn–Schunck weighted average: 1/6 for edge neighbours, 1/12 for corners,
/// with replicated borders.
#[inline]
fn neighbourhood_mean(f: &[Vec2], w: usize, h: usize, x: usize, y: usize) -> Vec2 {
    let xm = x.saturating_sub(1);
    let xp = (x + 1).min(w - 1);
    let ym = y.saturating_sub(1);
    let yp = (y + 1).min(h - 1);
    let at = |xx: usize, yy: usize| f[yy * w + xx];
    (at(xm, y) + at(xp, y) + at(x, ym) + at(x, yp)) / 6.0
        + (at(xm, ym) + at(xp, ym) + at(xm, yp) + at(xp, yp)) / 12.0
}
