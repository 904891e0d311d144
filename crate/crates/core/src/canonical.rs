//! Image deformation and the iterative fit / render / flow / deform loop that
//! pulls every input image toward one motion-free configuration.

use std::fmt::Write as _;

use log::{info, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowConfig, FlowField};
use crate::geometry::Camera;
use crate::image::ImageBuffer;
use crate::metrics::{psnr, ssim};
use crate::splat::{self, photometric_loss, GaussianScene, TrainConfig};

/// Backward warp: `out(p) = gt(p + f(p))`, bilinear, border clamped.
pub fn deform_image(gt: &ImageBuffer, flow: &FlowField) -> Result<ImageBuffer> {
    if gt.dims() != flow.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: flow.dims(),
        });
    }
    let (w, h) = gt.dims();
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(3 * w);
            for x in 0..w {
                let d = flow.get(x, y);
                row.extend_from_slice(&gt.sample_bilinear(x as f64 + d.x, y as f64 + d.y));
            }
            row
        })
        .collect();
    ImageBuffer::from_raw(w, h, rows.concat())
}

/// A reconstruction method seen as two operations: fit a state to posed
/// images, and render that state from a camera.
pub trait Backend: Sync {
    type State: Send + Sync;

    fn fit(&mut self, images: &[ImageBuffer], cams: &[Camera]) -> Result<Self::State>;

    fn render(&self, state: &Self::State, cam: &Camera) -> Result<ImageBuffer>;
}

/// Gaussian-splat backend. Every fit starts from `init` unless the training
/// config asks for a warm start, in which case it starts from the previous fit.
#[derive(Debug, Clone)]
pub struct GsplatBackend {
    pub init: GaussianScene,
    pub train: TrainConfig,
    previous: Option<GaussianScene>,
}

impl GsplatBackend {
    pub fn new(init: GaussianScene, train: TrainConfig) -> Self {
        Self {
            init,
            train,
            previous: None,
        }
    }

    /// Seeds the warm-start scene, e.g. when resuming.
    pub fn with_previous(mut self, scene: GaussianScene) -> Self {
        self.previous = Some(scene);
        self
    }
}

impl Backend for GsplatBackend {
    type State = GaussianScene;

    fn fit(&mut self, images: &[ImageBuffer], cams: &[Camera]) -> Result<GaussianScene> {
        let init = match (&self.previous, self.train.warm_start) {
            (Some(prev), true) => prev,
            _ => &self.init,
        };
        let scene = splat::train(images, cams, init, &self.train)?;
        self.previous = Some(scene.clone());
        Ok(scene)
    }

    fn render(&self, state: &GaussianScene, cam: &Camera) -> Result<ImageBuffer> {
        Ok(splat::render(state, cam, self.train.background))
    }
}

/// Perfect reconstruction: renders the known canonical image for each camera.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    cams: Vec<Camera>,
    images: Vec<ImageBuffer>,
}

impl OracleBackend {
    pub fn new(cams: Vec<Camera>, images: Vec<ImageBuffer>) -> Result<Self> {
        if cams.len() != images.len() {
            return Err(Error::LengthMismatch {
                expected: cams.len(),
                actual: images.len(),
            });
        }
        Ok(Self { cams, images })
    }
}

impl Backend for OracleBackend {
    type State = ();

    fn fit(&mut self, _images: &[ImageBuffer], _cams: &[Camera]) -> Result<()> {
        Ok(())
    }

    fn render(&self, _state: &(), cam: &Camera) -> Result<ImageBuffer> {
        self.cams
            .iter()
            .position(|c| c == cam)
            .map(|k| self.images[k].clone())
            .ok_or_else(|| Error::InvalidConfig("oracle backend has no image for this camera".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageReport {
    /// Training loss of the render against the image it was fitted to.
    pub loss: f64,
    pub psnr_deformed: f64,
    pub ssim_deformed: f64,
    pub psnr_canonical: Option<f64>,
    pub ssim_canonical: Option<f64>,
}

/// Scores of one fit of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub per_image: Vec<ImageReport>,
    /// Mean per-pixel change of the flow fields relative to the previous
    /// iteration, pixels. `None` when no previous flow exists.
    pub flow_change: Option<f64>,
}

impl IterationReport {
    fn mean_of(&self, f: impl Fn(&ImageReport) -> Option<f64>) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.per_image.iter().map(f).collect();
        let vals = vals?;
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_loss(&self) -> f64 {
        self.mean_of(|r| Some(r.loss)).unwrap_or(f64::NAN)
    }

    pub fn mean_psnr_deformed(&self) -> f64 {
        self.mean_of(|r| Some(r.psnr_deformed)).unwrap_or(f64::NAN)
    }

    pub fn mean_ssim_deformed(&self) -> f64 {
        self.mean_of(|r| Some(r.ssim_deformed)).unwrap_or(f64::NAN)
    }

    pub fn mean_psnr_canonical(&self) -> Option<f64> {
        self.mean_of(|r| r.psnr_canonical)
    }

    pub fn mean_ssim_canonical(&self) -> Option<f64> {
        self.mean_of(|r| r.ssim_canonical)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Number of flow/deform rounds; the loop fits `iterations + 1` times.
    pub iterations: usize,
    pub flow: FlowConfig,
    /// SSIM weight of the per-image loss reported for each fit.
    pub ssim_weight: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            flow: FlowConfig::default(),
            ssim_weight: 0.2,
        }
    }
}

/// Where a resumed run picks up: the iteration to fit next and the deformed
/// image set to fit it on.
#[derive(Debug, Clone)]
pub struct ResumePoint {
    pub iteration: usize,
    pub deformed: Vec<ImageBuffer>,
}

#[derive(Debug)]
pub struct LoopOutput<S> {
    pub state: S,
    pub reports: Vec<IterationReport>,
    pub deformed: Vec<ImageBuffer>,
}

/// Everything an observer sees after each fit.
pub struct IterationView<'a, S> {
    pub report: &'a IterationReport,
    pub state: &'a S,
    /// Images the fit was trained on.
    pub inputs: &'a [ImageBuffer],
    pub renders: &'a [ImageBuffer],
}

/// Runs the loop without observers, resume or canonical scoring.
pub fn canonical_iterate<B: Backend>(
    gt: &[ImageBuffer],
    cams: &[Camera],
    backend: &mut B,
    iterations: usize,
    flow_cfg: &FlowConfig,
) -> Result<LoopOutput<B::State>> {
    let cfg = LoopConfig {
        iterations,
        flow: flow_cfg.clone(),
        ..LoopConfig::default()
    };
    run_loop(gt, cams, backend, &cfg, None, None, |_| Ok(()))
}

/// Fits on `gt`, then `iterations` times: render every camera, estimate flow
/// from each render into its original image, warp the original image by that
/// flow, and refit on the warped set. Warps always start from `gt`.
pub fn run_loop<B: Backend>(
    gt: &[ImageBuffer],
    cams: &[Camera],
    backend: &mut B,
    cfg: &LoopConfig,
    canonical: Option<&[ImageBuffer]>,
    resume: Option<ResumePoint>,
    mut observe: impl FnMut(&IterationView<'_, B::State>) -> Result<()>,
) -> Result<LoopOutput<B::State>> {
    if gt.is_empty() {
        return Err(Error::EmptyInput("canonical loop needs at least one image"));
    }
    if gt.len() != cams.len() {
        return Err(Error::LengthMismatch {
            expected: cams.len(),
            actual: gt.len(),
        });
    }
    for (img, cam) in gt.iter().zip(cams) {
        if img.dims() != (cam.intrinsics.width, cam.intrinsics.height) {
            return Err(Error::InvalidConfig(format!(
                "image is {}x{} but its camera is {}x{}",
                img.width(),
                img.height(),
                cam.intrinsics.width,
                cam.intrinsics.height
            )));
        }
    }
    if let Some(c) = canonical {
        if c.len() != gt.len() {
            return Err(Error::LengthMismatch {
                expected: gt.len(),
                actual: c.len(),
            });
        }
    }
    cfg.flow.validate()?;

    let (start, mut current) = match resume {
        Some(r) => {
            if r.deformed.len() != gt.len() {
                return Err(Error::LengthMismatch {
                    expected: gt.len(),
                    actual: r.deformed.len(),
                });
            }
            if r.iteration > cfg.iterations {
                return Err(Error::InvalidConfig(format!(
                    "resume iteration {} beyond the requested {} iterations",
                    r.iteration, cfg.iterations
                )));
            }
            (r.iteration, r.deformed)
        }
        None => (0, gt.to_vec()),
    };

    let mut reports = Vec::new();
    let mut previous_flows: Option<Vec<FlowField>> = None;
    let mut t = start;
    loop {
        let state = backend.fit(&current, cams)?;
        let renders: Vec<ImageBuffer> = {
            let backend = &*backend;
            cams.par_iter()
                .map(|c| backend.render(&state, c))
                .collect::<Result<_>>()?
        };
        for (r, img) in renders.iter().zip(gt) {
            r.ensure_same_dims(img)?;
        }

        let mut per_image: Vec<ImageReport> = renders
            .par_iter()
            .zip(current.par_iter())
            .enumerate()
            .map(|(k, (render, input))| {
                let (psnr_canonical, ssim_canonical) = match canonical {
                    Some(c) => (Some(psnr(render, &c[k])?), Some(ssim(render, &c[k])?)),
                    None => (None, None),
                };
                Ok(ImageReport {
                    loss: photometric_loss(render, input, cfg.ssim_weight)?.total,
                    psnr_deformed: psnr(render, input)?,
                    ssim_deformed: ssim(render, input)?,
                    psnr_canonical,
                    ssim_canonical,
                })
            })
            .collect::<Result<_>>()?;
        per_image.shrink_to_fit();

        let last = t >= cfg.iterations;
        let flows = if last { None } else { Some(estimate_flows(&renders, gt, &cfg.flow)?) };
        let flow_change = match (&flows, &previous_flows) {
            (Some(a), Some(b)) => Some(mean_flow_difference(a, b)),
            _ => None,
        };

        let report = IterationReport {
            iteration: t,
            per_image,
            flow_change,
        };
        info!(
            "iteration {t}: loss {:.5}, psnr vs inputs {:.3} dB{}",
            report.mean_loss(),
            report.mean_psnr_deformed(),
            report
                .mean_psnr_canonical()
                .map(|p| format!(", psnr vs canonical {p:.3} dB"))
                .unwrap_or_default()
        );
        observe(&IterationView {
            report: &report,
            state: &state,
            inputs: &current,
            renders: &renders,
        })?;
        reports.push(report);

        match flows {
            None => {
                return Ok(LoopOutput {
                    state,
                    reports,
                    deformed: current,
                })
            }
            Some(flows) => {
                current = deform_all(gt, &flows)?;
                previous_flows = Some(flows);
            }
        }
        t += 1;
    }
}

/// Flow from each render into its original image. Non-finite fields are
/// replaced by zero flow.
pub fn estimate_flows(renders: &[ImageBuffer], gt: &[ImageBuffer], cfg: &FlowConfig) -> Result<Vec<FlowField>> {
    if renders.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: renders.len(),
        });
    }
    renders
        .par_iter()
        .zip(gt.par_iter())
        .enumerate()
        .map(|(k, (render, img))| {
            let f = estimate_flow(render, img, cfg)?;
            if f.is_finite() {
                Ok(f)
            } else {
                warn!("image {k}: non-finite flow, using zero flow");
                Ok(FlowField::zeros(img.width(), img.height()))
            }
        })
        .collect()
}

/// Warps each original image by its flow.
pub fn deform_all(gt: &[ImageBuffer], flows: &[FlowField]) -> Result<Vec<ImageBuffer>> {
    if flows.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: flows.len(),
        });
    }
    gt.par_iter().zip(flows.par_iter()).map(|(img, f)| deform_image(img, f)).collect()
}

fn mean_flow_difference(a: &[FlowField], b: &[FlowField]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for (va, vb) in fa.vectors().iter().zip(fb.vectors()) {
            total += (va - vb).norm();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub const REPORT_HEADER: &str = "iter,image,loss,psnr_deformed,ssim_deformed,psnr_canonical,ssim_canonical";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV rows for one report: one per image plus a `mean` row. No header.
pub fn report_rows(report: &IterationReport) -> String {
    let mut s = String::new();
    for (k, r) in report.per_image.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{},{}",
            report.iteration,
            k,
            r.loss,
            r.psnr_deformed,
            r.ssim_deformed,
            opt(r.psnr_canonical),
            opt(r.ssim_canonical)
        );
    }
    let _ = writeln!(
        s,
        "{},mean,{:.6},{:.6},{:.6},{},{}",
        report.iteration,
        report.mean_loss(),
        report.mean_psnr_deformed(),
        report.mean_ssim_deformed(),
        opt(report.mean_psnr_canonical()),
        opt(report.mean_ssim_canonical())
    );
    s
}

pub fn report_csv(reports: &[IterationReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&report_rows(r));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, CameraIntrinsics, Vec2, Vec3};
    use crate::synth::textured_image;

    fn ramp(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.5])
    }

    #[test]
    fn zero_flow_is_identity() {
        let img = textured_image(20, 16, Vec2::zeros());
        let out = deform_image(&img, &FlowField::zeros(20, 16)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_flow_translates() {
        let img = ramp(32, 24);
        let out = deform_image(&img, &FlowField::constant(32, 24, Vec2::new(3.0, 0.0))).unwrap();
        for y in 0..24 {
            for x in 0..29 {
                let got = out.pixel(x, y);
                let want = img.pixel(x + 3, y);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_flow_replicates_border() {
        let img = ramp(16, 16);
        let out = deform_image(&img, &FlowField::constant(16, 16, Vec2::new(100.0, -100.0))).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(out.pixel(x, y), img.pixel(15, 0));
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let img = ramp(16, 16);
        assert!(matches!(
            deform_image(&img, &FlowField::zeros(16, 15)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn cams(n: usize, w: usize, h: usize) -> Vec<Camera> {
        let k = CameraIntrinsics::new(40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        (0..n)
            .map(|i| {
                let a = i as f64;
                Camera::new(
                    k,
                    look_at(&Vec3::new(a.cos(), a.sin(), 0.5), &Vec3::zeros(), &Vec3::z()),
                )
            })
            .collect()
    }

    #[test]
    fn oracle_loop_pulls_inputs_to_canonical() {
        let (w, h) = (48, 48);
        let cams = cams(3, w, h);
        let canonical: Vec<ImageBuffer> = (0..3).map(|_| textured_image(w, h, Vec2::zeros())).collect();
        let gt: Vec<ImageBuffer> = (0..3)
            .map(|k| textured_image(w, h, Vec2::new(k as f64 - 1.0, 0.5 * k as f64)))
            .collect();
        let mut oracle = OracleBackend::new(cams.clone(), canonical.clone()).unwrap();
        let cfg = LoopConfig {
            iterations: 3,
            ..LoopConfig::default()
        };
        let out = run_loop(&gt, &cams, &mut oracle, &cfg, Some(&canonical), None, |_| Ok(())).unwrap();
        assert_eq!(out.reports.len(), 4);
        for (t, r) in out.reports.iter().enumerate() {
            assert_eq!(r.iteration, t);
        }
        let first = out.reports[1].mean_psnr_deformed();
        let base = out.reports[0].mean_psnr_deformed();
        assert!(first > base + 10.0, "{base} -> {first}");
        // The final fit computes no flow.
        assert!(out.reports[3].flow_change.is_none());
        let change = out.reports[2].flow_change.unwrap();
        assert!(change < 0.1, "{change}");
    }

    #[test]
    fn zero_iterations_fit_once() {
        let (w, h) = (24, 24);
        let cams = cams(2, w, h);
        let gt: Vec<ImageBuffer> = (0..2).map(|_| textured_image(w, h, Vec2::zeros())).collect();
        let mut oracle = OracleBackend::new(cams.clone(), gt.clone()).unwrap();
        let out = canonical_iterate(&gt, &cams, &mut oracle, 0, &FlowConfig::default()).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.deformed, gt);
        assert_eq!(out.reports[0].per_image[0].psnr_deformed, 99.0);
    }

    #[test]
    fn csv_has_mean_rows() {
        let report = IterationReport {
            iteration: 2,
            per_image: vec![
                ImageReport {
                    loss: 0.5,
                    psnr_deformed: 20.0,
                    ssim_deformed: 0.5,
                    psnr_canonical: None,
                    ssim_canonical: None,
                };
                2
            ],
            flow_change: None,
        };
        let csv = report_csv(&[report]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "2,mean,0.500000,20.000000,0.500000,,");
    }
}
