//! Photometric training loss `(1 - λ)·L1 + λ·(1 - SSIM)` and its image gradient.

use crate::error::Result;
use crate::image::{luminance, ImageBuffer};
use crate::metrics::ssim::ssim_gray;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
}

/// Evaluates the loss of `rendered` against `target`.
pub fn photometric_loss(rendered: &ImageBuffer, target: &ImageBuffer, ssim_weight: f64) -> Result<LossValue> {
    evaluate(rendered, target, ssim_weight, false).map(|(v, _)| v)
}

/// Evaluates the loss and `dL/d rendered`.
pub fn photometric_loss_grad(
    rendered: &ImageBuffer,
    target: &ImageBuffer,
    ssim_weight: f64,
) -> Result<(LossValue, ImageBuffer)> {
    evaluate(rendered, target, ssim_weight, true).map(|(v, g)| (v, g.expect("requested")))
}

fn evaluate(
    rendered: &ImageBuffer,
    target: &ImageBuffer,
    lambda: f64,
    with_grad: bool,
) -> Result<(LossValue, Option<ImageBuffer>)> {
    rendered.ensure_same_dims(target)?;
    let n = rendered.data().len() as f64;
    let l1 = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;

    let (ssim, ssim_grad) = if lambda > 0.0 {
        ssim_gray(&rendered.to_gray(), &target.to_gray(), with_grad)?
    } else {
        (1.0, None)
    };
    let total = (1.0 - lambda) * l1 + lambda * (1.0 - ssim);
    let value = LossValue { total, l1, ssim };
    if !with_grad {
        return Ok((value, None));
    }

    let (w, h) = rendered.dims();
    let mut grad = ImageBuffer::new(w, h);
    let l1_scale = (1.0 - lambda) / n;
    let weights = [luminance(1.0, 0.0, 0.0), luminance(0.0, 1.0, 0.0), luminance(0.0, 0.0, 1.0)];
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        let diff = rendered.data()[i] - target.data()[i];
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = l1_scale * sign;
        if let Some(sg) = &ssim_grad {
            *g -= lambda * weights[i % 3] * sg[i / 3];
        }
    }
    Ok((value, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images_have_zero_loss() {
        let img = ImageBuffer::from_fn(16, 16, |x, y| [x as f64 / 16.0, y as f64 / 16.0, 0.5]);
        let v = photometric_loss(&img, &img, 0.2).unwrap();
        assert!(v.total.abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = ImageBuffer::from_fn(14, 13, |_, _| [rng.random(), rng.random(), rng.random()]);
        let b = ImageBuffer::from_fn(14, 13, |_, _| [rng.random(), rng.random(), rng.random()]);
        let (_, g) = photometric_loss_grad(&a, &b, 0.2).unwrap();
        let eps = 1e-7;
        for i in [0, 7, 100, 301, 14 * 13 * 3 - 1] {
            let mut ap = a.clone();
            ap.data_mut()[i] += eps;
            let mut am = a.clone();
            am.data_mut()[i] -= eps;
            let fd = (photometric_loss(&ap, &b, 0.2).unwrap().total - photometric_loss(&am, &b, 0.2).unwrap().total)
                / (2.0 * eps);
            assert!((fd - g.data()[i]).abs() < 1e-6, "i={i} fd={fd} an={}", g.data()[i]);
        }
    }
}
