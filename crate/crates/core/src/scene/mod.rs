//! The frozen scene generator: latent-conditioned Gaussian-blob radiance
//! fields with latent-controlled lighting, rendered by differentiable volume
//! rendering.
//!
//! * [`camera`] — orbit poses looking at the origin and per-pixel rays.
//! * [`params`] — decoded blob + lighting parameters and their gradients.
//! * [`generator`] — the frozen affine decoder from a W+ code to scene
//!   parameters, with its exact transpose (backward) map.
//! * [`render`] — forward volume rendering into a [`RenderedView`] and the
//!   hand-written reverse-mode pass from buffer gradients to latent
//!   gradients.
//! * [`oracle`] — an independently written renderer (optical-depth
//!   transmittance, no shared compositing code) used to cross-check
//!   `render` in tests.
//! * [`export`] — lossless 8-bit raster export of view buffers with a
//!   sidecar describing the value mapping.

pub mod camera;
pub mod export;
pub mod generator;
pub mod oracle;
pub mod params;
pub mod render;
mod view;

pub use camera::{default_side_range, sample_side_pose, sample_side_pose_in, CameraPose};
pub use generator::{DecodeBackward, SceneGenerator};
pub use params::{SceneParamGrads, ToySceneParams};
pub use render::{render, render_backward, render_backward_params, render_params, RenderQuality};
pub use view::{psnr, psnr_rgb, RenderedView};
