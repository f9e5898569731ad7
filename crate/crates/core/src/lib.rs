//! Guided latent-space optimization over a toy differentiable 3D scene
//! generator.
//!
//! The crate implements the full stack needed to invert, edit, and relight
//! scenes produced by a frozen latent-conditioned generator:
//!
//! * [`latent`] — latent codes (W / W+), population statistics, and the
//!   quadratic latent regularizer.
//! * [`lighting`] — order-2 spherical-harmonic lighting: basis evaluation,
//!   Lambertian shading, rotation, and differentiable least-squares
//!   estimation of lighting coefficients from a rendered view.
//! * [`scene`] — the frozen affine decoder from latents to blob/lighting
//!   parameters, pinhole cameras, the volume renderer, and hand-written
//!   reverse-mode derivatives for everything on that path.
//! * [`perceptual`] — frozen random convolutional encoders standing in for
//!   pretrained feature and identity networks, with exact input gradients.
//! * [`diffusion`] — a linear image-to-latent encoder, a cosine noise
//!   schedule, an analytic Gaussian denoiser, and the score-distillation
//!   gradient that skips differentiating through the denoiser.
//! * [`pipeline`] — the composite objective, Adam, the staged optimization
//!   loops (inversion, editing, relighting, generation, tuning), run
//!   manifests, and parameter sweeps.
//!
//! Heavy per-pixel loops are data-parallel via rayon when the `parallel`
//! feature (on by default) is enabled, with a sequential fallback that
//! produces bitwise-identical results.

pub mod diffusion;
pub mod error;
mod exec;
pub mod latent;
pub mod lighting;
pub mod perceptual;
pub mod pipeline;
pub mod scene;
pub mod seeds;

pub use error::{Error, Result};
pub use latent::{LatentCode, LatentSpace, LatentStats};
pub use pipeline::{
    ObjectiveSpec, OptimizeOptions, PipelineContext, PipelineSettings, RunManifest, RunOutcome,
};
