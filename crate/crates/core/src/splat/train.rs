//! Stochastic per-image gradient descent on a Gaussian scene.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::{ImageBuffer, Rgb};

use super::loss::{photometric_loss, photometric_loss_grad};
use super::primitive::{GaussianScene, ParamGroup, PARAMS_PER_PRIMITIVE};
use super::render::{render, render_gradients};
use super::{near_camera_mask, prune_by_opacity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub mean: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl LearningRates {
    /// Step sizes for plain gradient descent on the pixel-mean loss.
    pub fn sgd() -> Self {
        Self {
            mean: 0.02,
            rotation: 3.0,
            scale: 21.0,
            opacity: 135.0,
            color: 9.0,
        }
    }

    /// Step sizes for Adam, where each step moves a parameter by about `lr`.
    pub fn adam() -> Self {
        Self {
            mean: 2e-4,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 2.5e-2,
            color: 2.5e-3,
        }
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Mean => self.mean,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Color => self.color,
        }
    }

    fn per_param(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let mut out = [0.0; PARAMS_PER_PRIMITIVE];
        for g in ParamGroup::ALL {
            for i in g.range() {
                out[i] = self.get(g);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Heavy-ball momentum.
    Momentum { beta: f64 },
    /// Adam with bias correction.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

/// Removes near-camera primitives during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearCameraPrune {
    pub z_min: f64,
    pub radius: f64,
}

impl Default for NearCameraPrune {
    fn default() -> Self {
        Self {
            z_min: 0.30,
            radius: 0.60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rates: LearningRates,
    /// Final learning rate as a fraction of the initial one; decay is exponential.
    pub lr_final_factor: f64,
    pub optimizer: Optimizer,
    /// λ in `(1 - λ)·L1 + λ·(1 - SSIM)`.
    pub ssim_weight: f64,
    pub prune_opacity: f64,
    pub prune_interval: usize,
    pub near_camera_prune: Option<NearCameraPrune>,
    pub background: Rgb,
    pub seed: u64,
    /// Reuse the previous fit as initialization (used by the canonical loop).
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rates: LearningRates::sgd(),
            lr_final_factor: 0.1,
            optimizer: Optimizer::Sgd,
            ssim_weight: 0.2,
            prune_opacity: 0.005,
            prune_interval: 200,
            near_camera_prune: Some(NearCameraPrune::default()),
            background: [0.0; 3],
            seed: 0,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    /// Adam with its matching step sizes; everything else default.
    pub fn adam() -> Self {
        Self {
            learning_rates: LearningRates::adam(),
            optimizer: Optimizer::adam(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::InvalidConfig(format!(
                "ssim_weight must lie in [0, 1], got {}",
                self.ssim_weight
            )));
        }
        if !(self.lr_final_factor > 0.0) {
            return Err(Error::InvalidConfig("lr_final_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Mean training loss of `scene` over the whole image set.
pub fn dataset_loss(scene: &GaussianScene, images: &[ImageBuffer], cams: &[Camera], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for (img, cam) in images.iter().zip(cams) {
        let rendered = render(scene, cam, cfg.background);
        total += photometric_loss(&rendered, img, cfg.ssim_weight)?.total;
    }
    Ok(total / images.len().max(1) as f64)
}

struct OptimizerState {
    first: Vec<[f64; PARAMS_PER_PRIMITIVE]>,
    second: Vec<[f64; PARAMS_PER_PRIMITIVE]>,
}

impl OptimizerState {
    fn new(n: usize) -> Self {
        Self {
            first: vec![[0.0; PARAMS_PER_PRIMITIVE]; n],
            second: vec![[0.0; PARAMS_PER_PRIMITIVE]; n],
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.first.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.second.retain(|_| *it.next().unwrap());
    }
}

/// Fits `init` to the posed images. Deterministic for a given config.
pub fn train(images: &[ImageBuffer], cams: &[Camera], init: &GaussianScene, cfg: &TrainConfig) -> Result<GaussianScene> {
    cfg.validate()?;
    if images.is_empty() || images.len() != cams.len() {
        return Err(Error::InvalidConfig(format!(
            "need matching non-empty image and camera lists (got {} images, {} cameras)",
            images.len(),
            cams.len()
        )));
    }
    for (img, cam) in images.iter().zip(cams) {
        let k = &cam.intrinsics;
        if img.dims() != (k.width, k.height) {
            return Err(Error::DimensionMismatch {
                expected: (k.width, k.height),
                actual: img.dims(),
            });
        }
    }
    if cfg.steps == 0 || init.is_empty() {
        return Ok(init.clone());
    }

    let initial_loss = dataset_loss(init, images, cams, cfg)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }

    let mut scene = init.clone();
    let mut state = OptimizerState::new(scene.len());
    let base_lr = cfg.learning_rates.per_param();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();

    for step in 0..cfg.steps {
        if order.is_empty() {
            order = (0..images.len()).collect();
            order.shuffle(&mut rng);
        }
        let idx = order.pop().expect("refilled above");
        let cam = &cams[idx];
        let rendered = render(&scene, cam, cfg.background);
        let (loss, dl_dimg) = photometric_loss_grad(&rendered, &images[idx], cfg.ssim_weight)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = render_gradients(&scene, cam, cfg.background, &dl_dimg);
        if !grads.is_finite() {
            return Err(Error::Diverged { step });
        }

        let progress = step as f64 / cfg.steps as f64;
        let decay = cfg.lr_final_factor.powf(progress);
        apply_update(&mut scene, &mut state, &grads.per_primitive, &base_lr, decay, &cfg.optimizer, step + 1);

        if cfg.prune_interval > 0 && (step + 1) % cfg.prune_interval == 0 && step + 1 < cfg.steps {
            let mut keep: Vec<bool> = scene.primitives.iter().map(|p| p.opacity() >= cfg.prune_opacity).collect();
            if let Some(near) = cfg.near_camera_prune {
                let survivors = near_camera_mask(&scene, cams, near.z_min, near.radius);
                for (k, s) in keep.iter_mut().zip(survivors) {
                    *k &= s;
                }
            }
            if keep.iter().any(|k| !k) {
                let before = scene.len();
                let mut it = keep.iter();
                scene.primitives.retain(|_| *it.next().unwrap());
                state.retain(&keep);
                debug!("step {}: pruned {} primitives", step + 1, before - scene.len());
            }
            if scene.is_empty() {
                break;
            }
        }
        if !scene.is_finite() {
            return Err(Error::Diverged { step });
        }
    }
    // Opacity pruning is not applied after the final step; do it once here.
    let scene = prune_by_opacity(&scene, cfg.prune_opacity);

    let final_loss = dataset_loss(&scene, images, cams, cfg)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    debug!("training loss {initial_loss:.5} -> {final_loss:.5}");
    if final_loss > initial_loss {
        warn!("training increased the loss ({initial_loss:.5} -> {final_loss:.5}); keeping the initialization");
        return Ok(init.clone());
    }
    Ok(scene)
}

fn apply_update(
    scene: &mut GaussianScene,
    state: &mut OptimizerState,
    grads: &[[f64; PARAMS_PER_PRIMITIVE]],
    base_lr: &[f64; PARAMS_PER_PRIMITIVE],
    decay: f64,
    optimizer: &Optimizer,
    t: usize,
) {
    for (i, prim) in scene.primitives.iter_mut().enumerate() {
        let g = &grads[i];
        let mut p = prim.params();
        for j in 0..PARAMS_PER_PRIMITIVE {
            let lr = base_lr[j] * decay;
            if lr == 0.0 {
                continue;
            }
            let step = match *optimizer {
                Optimizer::Sgd => g[j],
                Optimizer::Momentum { beta } => {
                    let m = &mut state.first[i][j];
                    *m = beta * *m + g[j];
                    *m
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let m = &mut state.first[i][j];
                    *m = beta1 * *m + (1.0 - beta1) * g[j];
                    let v = &mut state.second[i][j];
                    *v = beta2 * *v + (1.0 - beta2) * g[j] * g[j];
                    let m_hat = *m / (1.0 - beta1.powi(t as i32));
                    let v_hat = *v / (1.0 - beta2.powi(t as i32));
                    m_hat / (v_hat.sqrt() + epsilon)
                }
            };
            p[j] -= lr * step;
        }
        // Keep the rotation on the unit sphere and colors displayable.
        let qn = p[3..7].iter().map(|v| v * v).sum::<f64>().sqrt();
        if qn > 0.0 {
            for v in &mut p[3..7] {
                *v /= qn;
            }
        }
        for v in &mut p[11..14] {
            *v = v.clamp(0.0, 1.0);
        }
        prim.set_params(&p);
    }
}
