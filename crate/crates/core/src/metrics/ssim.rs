//! Windowed SSIM on grayscale images, with its gradient.
//!
//! Uses an 11×11 Gaussian window (σ = 1.5) over valid window positions only,
//! `C1 = 0.01²`, `C2 = 0.03²` for intensities in `[0, 1]`.

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Valid-mode separable correlation; output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a `(w - 10) x (h - 10)` map back to `w x h`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                tmp[(y + i) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

fn check(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch {
            expected: (a.width, a.height),
            actual: (b.width, b.height),
        });
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            min: WINDOW,
        });
    }
    Ok(())
}

/// Mean SSIM of two grayscale images, and optionally `d ssim / d a`.
pub(crate) fn ssim_gray(a: &GrayImage, b: &GrayImage, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let k = kernel();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&a.data, w, h, &k);
    let mu_b = filter_valid(&b.data, w, h, &k);
    let e_aa = filter_valid(&sq(&a.data), w, h, &k);
    let e_bb = filter_valid(&sq(&b.data), w, h, &k);
    let e_ab = filter_valid(&prod, w, h, &k);

    let n = mu_a.len();
    let mut total = 0.0;
    let (mut d_mu, mut d_var, mut d_cov) = if with_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let var_a = e_aa[p] - ma * ma;
        let var_b = e_bb[p] - mb * mb;
        let cov = e_ab[p] - ma * mb;
        let n1 = 2.0 * ma * mb + C1;
        let n2 = 2.0 * cov + C2;
        let d1 = ma * ma + mb * mb + C1;
        let d2 = var_a + var_b + C2;
        let s = n1 * n2 / (d1 * d2);
        total += s;
        if with_grad {
            d_mu[p] = 2.0 * mb * n2 / (d1 * d2) - s * 2.0 * ma / d1;
            d_var[p] = -s / d2;
            d_cov[p] = 2.0 * n1 / (d1 * d2);
        }
    }
    let mean = total / n as f64;
    if !with_grad {
        return Ok((mean, None));
    }
    // dS/da_q = Σ_p w(q-p) [dμ + 2 dvar (a_q - μa) + dcov (b_q - μb)]
    let base: Vec<f64> = (0..n)
        .map(|p| d_mu[p] - 2.0 * d_var[p] * mu_a[p] - d_cov[p] * mu_b[p])
        .collect();
    let g_base = filter_valid_adjoint(&base, w, h, &k);
    let g_var = filter_valid_adjoint(&d_var, w, h, &k);
    let g_cov = filter_valid_adjoint(&d_cov, w, h, &k);
    let inv_n = 1.0 / n as f64;
    let grad = (0..w * h)
        .map(|q| (g_base[q] + 2.0 * a.data[q] * g_var[q] + b.data[q] * g_cov[q]) * inv_n)
        .collect();
    Ok((mean, Some(grad)))
}
