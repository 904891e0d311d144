//! Dense optical flow.
//!
//! [`estimate_flow`] converts both images to grayscale, box-downsamples them by
//! the wrapper factor, runs coarse-to-fine Horn–Schunck with warping, and
//! bilinearly upsamples the result back to the input grid with vectors rescaled
//! to full-resolution pixels.

mod horn_schunck;
mod io;

pub use horn_schunck::horn_schunck_pyramid;
pub use io::{read_flo, write_flo};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::image::{bilinear_axis, GrayImage, ImageBuffer};

/// Per-pixel displacement in pixels, defined on a source image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<Vec2>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, Vec2::zeros())
    }

    pub fn constant(width: usize, height: usize, v: Vec2) -> Self {
        Self {
            width,
            height,
            vectors: vec![v; width * height],
        }
    }

    pub fn from_vectors(width: usize, height: usize, vectors: Vec<Vec2>) -> Result<Self> {
        if vectors.len() != width * height {
            return Err(Error::InvalidConfig(format!(
                "{} flow vectors for a {width}x{height} grid",
                vectors.len()
            )));
        }
        Ok(Self {
            width,
            height,
            vectors,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn vectors(&self) -> &[Vec2] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [Vec2] {
        &mut self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec2 {
        self.vectors[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.x.is_finite() && v.y.is_finite())
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Bilinear sample with border clamping.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Vec2 {
        let (x0, x1, fx) = bilinear_axis(x, self.width);
        let (y0, y1, fy) = bilinear_axis(y, self.height);
        let top = self.get(x0, y0) + (self.get(x1, y0) - self.get(x0, y0)) * fx;
        let bottom = self.get(x0, y1) + (self.get(x1, y1) - self.get(x0, y1)) * fx;
        top + (bottom - top) * fy
    }

    /// Resamples onto a `width x height` grid covering the same image area,
    /// scaling vectors by the size ratio per axis.
    pub fn resize(&self, width: usize, height: usize) -> FlowField {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = self.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
                vectors.push(Vec2::new(v.x / sx, v.y / sy));
            }
        }
        FlowField {
            width,
            height,
            vectors,
        }
    }

    /// Mean endpoint error against `other` over pixels at least `margin` from the border.
    pub fn mean_endpoint_error(&self, other: &FlowField, margin: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                sum += (self.get(x, y) - other.get(x, y)).norm();
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub levels: usize,
    pub iterations: usize,
    /// Smoothness weight α on the 0–255 intensity scale.
    pub alpha: f64,
    pub warps: usize,
    /// Integer downsampling applied before estimation.
    pub downsample: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            iterations: 100,
            alpha: 60.0,
            warps: 3,
            downsample: 2,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidConfig("flow needs at least one pyramid level".into()));
        }
        if self.downsample < 1 {
            return Err(Error::InvalidConfig("flow downsample factor must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig("flow smoothness weight must be positive".into()));
        }
        Ok(())
    }
}

/// Flow on `src`'s grid such that `src(p) ≈ dst(p + f(p))`.
pub fn estimate_flow(src: &ImageBuffer, dst: &ImageBuffer, cfg: &FlowConfig) -> Result<FlowField> {
    cfg.validate()?;
    src.ensure_same_dims(dst)?;
    let (w, h) = src.dims();
    let a = box_downsample(&src.to_gray(), cfg.downsample);
    let b = box_downsample(&dst.to_gray(), cfg.downsample);
    let coarse = horn_schunck_pyramid(&a, &b, cfg);
    if cfg.downsample == 1 {
        return Ok(coarse);
    }
    Ok(coarse.resize(w, h))
}

/// Averages `factor x factor` blocks; partial blocks at the border average
/// whatever pixels they contain.
pub(crate) fn box_downsample(img: &GrayImage, factor: usize) -> GrayImage {
    if factor <= 1 {
        return img.clone();
    }
    let w = img.width.div_ceil(factor);
    let h = img.height.div_ceil(factor);
    GrayImage::from_fn(w, h, |x, y| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for yy in y * factor..((y + 1) * factor).min(img.height) {
            for xx in x * factor..((x + 1) * factor).min(img.width) {
                sum += img.get(xx, yy);
                n += 1;
            }
        }
        sum / n as f64
    })
}
