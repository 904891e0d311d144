//! Motion-compensated Gaussian-splat reconstruction.
//!
//! The crate covers the full desk-scale pipeline: a synthetic plant scene with
//! per-capture leaf motion, a differentiable splat renderer and trainer, dense
//! optical flow, the iterative train/render/flow/deform loop that pulls the
//! input images into a canonical configuration, image metrics, mesh extraction,
//! and a simulator of the marker-guided UAV capture flight that produces the
//! camera poses.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod canonical;
pub mod capture;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod splat;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Camera, CameraIntrinsics, Pose, Vec2, Vec3};
pub use image::{GrayImage, ImageBuffer, Rgb};
pub use splat::{GaussianPrimitive, GaussianScene, TrainConfig};
