//! Image quality metrics and flow-aligned evaluation.

pub(crate) mod ssim;

use crate::canonical::deform_image;
use crate::error::Result;
use crate::flow::{estimate_flow, FlowConfig};
use crate::image::ImageBuffer;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1 / MSE)` over all RGB channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Mean local SSIM on the grayscale conversion of both images.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_dims(b)?;
    ssim::ssim_gray(&a.to_gray(), &b.to_gray(), false).map(|(v, _)| v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean_psnr = per_image.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n;
        Self {
            per_image,
            mean_psnr,
            mean_ssim,
        }
    }
}

pub fn score(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<ImageScore> {
    Ok(ImageScore {
        psnr: psnr(pred, gt)?,
        ssim: ssim(pred, gt)?,
    })
}

/// Direct (unaligned) scores for paired image sets.
pub fn evaluate(preds: &[ImageBuffer], gts: &[ImageBuffer]) -> Result<MetricReport> {
    let scores = preds.iter().zip(gts).map(|(p, g)| score(p, g)).collect::<Result<_>>()?;
    Ok(MetricReport::from_scores(scores))
}

/// Warps `pred` into the viewpoint of `gt` with the flow estimated from `gt`
/// to `pred`, returning the warped prediction.
pub fn align_prediction(pred: &ImageBuffer, gt: &ImageBuffer, flow_cfg: &FlowConfig) -> Result<ImageBuffer> {
    pred.ensure_same_dims(gt)?;
    let flow = estimate_flow(gt, pred, flow_cfg)?;
    deform_image(pred, &flow)
}

/// PSNR/SSIM between `gt` and the flow-aligned prediction.
pub fn flow_aligned_metrics(pred: &ImageBuffer, gt: &ImageBuffer, flow_cfg: &FlowConfig) -> Result<MetricReport> {
    let aligned = align_prediction(pred, gt, flow_cfg)?;
    Ok(MetricReport::from_scores(vec![score(&aligned, gt)?]))
}

/// Flow-aligned scores for paired image sets.
pub fn evaluate_flow_aligned(preds: &[ImageBuffer], gts: &[ImageBuffer], flow_cfg: &FlowConfig) -> Result<MetricReport> {
    let scores = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| score(&align_prediction(p, g, flow_cfg)?, g))
        .collect::<Result<_>>()?;
    Ok(MetricReport::from_scores(scores))
}
