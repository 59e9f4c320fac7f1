//! Weakly-supervised generative spatio-temporal fusion of thermal satellite imagery.
//!
//! This crate estimates fine-resolution (10 m-class) land surface temperature from a
//! coarse daily thermal observation plus a prior multi-sensor reference triple. The
//! model is trained without fine-resolution ground truth: the generated fine map is
//! pooled with a 3x3 block average and compared against mid-resolution observations.
//!
//! The main building blocks:
//!
//! * [`raster`] — grid-aware rasters, resampling, block averaging, gap filling,
//!   Gaussian smoothing, GeoTIFF and patch-archive I/O.
//! * [`indices`] — NDVI / NDBI / NDWI spectral indices.
//! * [`dataset`] — manifest-driven sample assembly, validation, normalization and
//!   patch extraction.
//! * [`nn`] — a small reverse-mode autodiff engine over `ndarray`, generic over
//!   `f32` / `f64`.
//! * [`model`] — the four-stage generator and the conditional patch discriminator.
//! * [`training`] — weak-supervision pooling, least-squares adversarial losses and
//!   the alternating training loop.
//! * [`metrics`] — evaluation metrics (RMSE, SSIM, MS-SSIM, PSNR, SAM, CC, ERGAS,
//!   PCC, SRCC) and report assembly.
//! * [`synthscene`] — seeded synthetic multi-resolution scenes for desk-scale
//!   verification.
//! * [`infer`] — tiled full-scene inference with overlap blending.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod indices;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod raster;
pub mod synthscene;
pub mod training;

pub use error::{Error, Result};
