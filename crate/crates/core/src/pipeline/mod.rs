//! The guided optimization pipeline: a weighted multi-term objective over a
//! frozen generator's latent space, a two-stage optimizer (latent descent,
//! then decoder fine-tuning around the found pivot), text-only generation,
//! and weight-ablation sweeps. Every run yields a [`RunManifest`] that
//! records enough to replay it exactly.
//!
//! The objective combines five terms:
//!
//! * identity and reconstruction losses, measured only from the input
//!   image's camera;
//! * the score-distillation term and the lighting term, measured from one
//!   freshly sampled side view per iteration (shared between the two unless
//!   decoupled in the settings);
//! * a quadratic pull toward the latent sample mean.
//!
//! The reported total is the weighted sum of the five raw values. The
//! gradient is exact for every term except distillation, which contributes
//! its custom residual gradient (the denoiser Jacobian is skipped).

mod adam;
mod manifest;

pub use adam::{Adam, BETAS as ADAM_BETAS, EPSILON as ADAM_EPSILON};
pub use manifest::{
    sha256_hex, FinalMetrics, IterationRecord, LambdaWeights, LossParts, ManifestConfig,
    PoseTagRecord, RunManifest,
};

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    draw_sds_sample, sds_on_rgb, DiffusionSchedule, LatentImageEncoder, PromptBank, SdsSample,
    POOL_GRID,
};
use crate::error::{Error, Result};
use crate::latent::{
    estimate_latent_stats, regularization_loss_grad, LatentCode, LatentSpace, LatentStats,
};
use crate::lighting::{illumination_loss, illumination_loss_grad, Frame, SHLighting};
use crate::perceptual::PerceptualStack;
use crate::scene::{
    psnr_rgb, render, render_backward_params, sample_side_pose_in, CameraPose, RenderQuality,
    SceneGenerator,
};
use crate::seeds;

/// Stage-1 (latent descent) defaults.
pub const DEFAULT_STAGE1_ITERS: usize = 500;
pub const DEFAULT_STAGE1_STEP: f64 = 0.01;
/// Stage-2 (decoder fine-tuning) defaults.
pub const DEFAULT_PTI_ITERS: usize = 200;
pub const DEFAULT_PTI_STEP: f64 = 1e-3;
/// Default edit weights `(lambda_id, lambda_r, lambda_d)`.
pub const DEFAULT_EDIT_WEIGHTS: (f64, f64, f64) = (0.2, 0.2, 2e-5);
/// Default lighting-term weight when a target light is present.
pub const DEFAULT_LAMBDA_IL: f64 = 1.0;
/// Text-only generation defaults.
pub const DEFAULT_GENERATE_LAMBDA_D: f64 = 1.0;
pub const DEFAULT_GENERATE_LAMBDA_REGU: f64 = 0.1;
pub const DEFAULT_GENERATE_ITERS: usize = 300;
/// Ridge used by the differentiable lighting fit inside the objective.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Draws used to estimate the latent mean and spread.
pub const DEFAULT_STATS_SAMPLES: usize = 256;

/// Everything fixed before a run: generator architecture, encoder seed,
/// render quality, schedules, and sampling ranges. Serializable so a
/// manifest can echo it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSettings {
    pub weights_seed: u64,
    pub blob_count: usize,
    pub layers: usize,
    pub dim: usize,
    pub image_size: usize,
    pub quality: RenderQuality,
    pub schedule: DiffusionSchedule,
    pub theta_range: (f64, f64),
    pub phi_range: (f64, f64),
    pub separate_side_views: bool,
    pub ridge: f64,
    pub stats_samples: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            weights_seed: 0,
            blob_count: 8,
            layers: 4,
            dim: 64,
            image_size: 64,
            quality: RenderQuality::default(),
            schedule: DiffusionSchedule::default(),
            theta_range: crate::scene::default_side_range(),
            phi_range: crate::scene::default_side_range(),
            separate_side_views: false,
            ridge: DEFAULT_RIDGE,
            stats_samples: DEFAULT_STATS_SAMPLES,
        }
    }
}

impl PipelineSettings {
    /// A small configuration for fast tests: 16-pixel images, 8 samples
    /// per ray, 64 stats draws. Same defaults otherwise.
    pub fn small(weights_seed: u64) -> Self {
        Self {
            weights_seed,
            image_size: 16,
            quality: RenderQuality {
                samples_per_ray: 8,
                ..RenderQuality::default()
            },
            stats_samples: 64,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % POOL_GRID != 0 {
            return Err(Error::InvalidArgument(format!(
                "image_size must be a positive multiple of {POOL_GRID}, got {}",
                self.image_size
            )));
        }
        self.quality.validate()?;
        self.schedule.validate()?;
        for (name, (lo, hi)) in [
            ("theta_range", self.theta_range),
            ("phi_range", self.phi_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a finite nonempty interval, got [{lo}, {hi}]"
                )));
            }
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "ridge must be finite and nonnegative, got {}",
                self.ridge
            )));
        }
        if self.stats_samples < 2 {
            return Err(Error::InvalidArgument(format!(
                "stats_samples must be at least 2, got {}",
                self.stats_samples
            )));
        }
        Ok(())
    }
}

/// The frozen stack a run operates on: generator, encoders, prompt table,
/// and latent statistics, all derived deterministically from the settings.
pub struct PipelineContext {
    pub generator: SceneGenerator,
    pub perceptual: PerceptualStack,
    pub latent_encoder: LatentImageEncoder,
    pub bank: PromptBank,
    pub stats: LatentStats,
    settings: PipelineSettings,
}

impl PipelineContext {
    /// Build every frozen component from the settings. The prompt bank
    /// starts empty; fill it before using distillation or prompts.
    pub fn build(settings: PipelineSettings) -> Result<Self> {
        settings.validate()?;
        let generator = SceneGenerator::new(
            settings.blob_count,
            settings.layers,
            settings.dim,
            settings.weights_seed,
        )?;
        let perceptual = PerceptualStack::new(settings.weights_seed, settings.image_size)?;
        let latent_encoder = LatentImageEncoder::new(settings.weights_seed, settings.image_size)?;
        let sampler_gen = generator.clone();
        let stats = estimate_latent_stats(
            move |rng| sampler_gen.sample_latent(rng),
            settings.stats_samples,
            settings.weights_seed,
        )?;
        Ok(Self {
            generator,
            perceptual,
            latent_encoder,
            bank: PromptBank::new(),
            stats,
            settings,
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn image_size(&self) -> usize {
        self.settings.image_size
    }

    pub fn quality(&self) -> &RenderQuality {
        &self.settings.quality
    }

    pub fn frontal_pose(&self) -> CameraPose {
        CameraPose::frontal(self.settings.image_size)
    }

    /// The latent sample mean as a W+ code.
    pub fn mean_latent(&self) -> LatentCode {
        self.stats.mean.clone()
    }
}

/// The weighted objective: which terms are active, their weights, and the
/// fixed data (input image and pose, target light, prompt) they compare
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub lambda_id: f64,
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub lambda_il: f64,
    pub lambda_regu: f64,
    pub prompt: Option<String>,
    pub target_light: Option<SHLighting>,
    pub input_image: Option<Vec<[f64; 3]>>,
    pub input_pose: Option<CameraPose>,
}

impl ObjectiveSpec {
    /// All weights zero, nothing attached.
    pub fn empty() -> Self {
        Self {
            lambda_id: 0.0,
            lambda_r: 0.0,
            lambda_d: 0.0,
            lambda_il: 0.0,
            lambda_regu: 0.0,
            prompt: None,
            target_light: None,
            input_image: None,
            input_pose: None,
        }
    }

    /// Reconstruction-only inversion of an input image.
    pub fn invert(input_image: Vec<[f64; 3]>, input_pose: CameraPose) -> Self {
        Self {
            lambda_r: 1.0,
            input_image: Some(input_image),
            input_pose: Some(input_pose),
            ..Self::empty()
        }
    }

    /// Prompt-guided editing with the default weights.
    pub fn edit(prompt: impl Into<String>, input_image: Vec<[f64; 3]>, input_pose: CameraPose) -> Self {
        let (lambda_id, lambda_r, lambda_d) = DEFAULT_EDIT_WEIGHTS;
        Self {
            lambda_id,
            lambda_r,
            lambda_d,
            prompt: Some(prompt.into()),
            input_image: Some(input_image),
            input_pose: Some(input_pose),
            ..Self::empty()
        }
    }

    /// Relighting: identity/reconstruction preservation plus the lighting
    /// term, no distillation.
    pub fn relight(
        input_image: Vec<[f64; 3]>,
        input_pose: CameraPose,
        target_light: SHLighting,
    ) -> Self {
        let (lambda_id, lambda_r, _) = DEFAULT_EDIT_WEIGHTS;
        Self {
            lambda_id,
            lambda_r,
            lambda_il: DEFAULT_LAMBDA_IL,
            target_light: Some(target_light),
            input_image: Some(input_image),
            input_pose: Some(input_pose),
            ..Self::empty()
        }
    }

    /// Text-only generation: distillation plus the mean pull.
    pub fn generate(prompt: impl Into<String>, lambda_d: f64, lambda_regu: f64) -> Self {
        Self {
            lambda_d,
            lambda_regu,
            prompt: Some(prompt.into()),
            ..Self::empty()
        }
    }

    pub fn weights(&self) -> LambdaWeights {
        LambdaWeights {
            lambda_id: self.lambda_id,
            lambda_r: self.lambda_r,
            lambda_d: self.lambda_d,
            lambda_il: self.lambda_il,
            lambda_regu: self.lambda_regu,
        }
    }

    /// Structural invariants plus compatibility with a concrete context
    /// (registered prompt, matching image sizes, world-frame target).
    pub fn validate_against(&self, ctx: &PipelineContext) -> Result<()> {
        let fail = |field: &str, message: String| -> Result<()> {
            Err(Error::SpecViolation {
                field: field.to_string(),
                message,
            })
        };
        for (field, v) in [
            ("lambda_id", self.lambda_id),
            ("lambda_r", self.lambda_r),
            ("lambda_d", self.lambda_d),
            ("lambda_il", self.lambda_il),
            ("lambda_regu", self.lambda_regu),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(field, format!("must be finite and nonnegative, got {v}"));
            }
        }
        if self.lambda_d > 0.0 && self.prompt.is_none() {
            return fail("prompt", "required when lambda_d > 0".into());
        }
        if let Some(prompt) = &self.prompt {
            ctx.bank.get(prompt)?;
        }
        if self.lambda_il > 0.0 && self.target_light.is_none() {
            return fail("target_light", "required when lambda_il > 0".into());
        }
        if let Some(light) = &self.target_light {
            if light.frame != Frame::World {
                return Err(Error::FrameMismatch {
                    expected: "WORLD".into(),
                    got: format!("{:?}", light.frame),
                });
            }
        }
        let needs_input = self.lambda_id > 0.0 || self.lambda_r > 0.0;
        if needs_input && (self.input_image.is_none() || self.input_pose.is_none()) {
            return fail(
                "input_image/input_pose",
                "required when lambda_id > 0 or lambda_r > 0".into(),
            );
        }
        if let Some(pose) = &self.input_pose {
            CameraPose::new(pose.theta, pose.phi, pose.radius, pose.fov_y, pose.image_size)?;
            if pose.image_size != ctx.image_size() {
                return fail(
                    "input_pose",
                    format!(
                        "image_size {} does not match the pipeline's {}",
                        pose.image_size,
                        ctx.image_size()
                    ),
                );
            }
        }
        if let Some(img) = &self.input_image {
            let n = ctx.image_size() * ctx.image_size();
            if img.len() != n {
                return fail(
                    "input_image",
                    format!("expected {n} pixels, got {}", img.len()),
                );
            }
            if img.iter().flatten().any(|v| !v.is_finite()) {
                return fail("input_image", "contains non-finite values".into());
            }
            if self.input_pose.is_none() {
                return fail("input_pose", "required when input_image is present".into());
            }
        }
        Ok(())
    }
}

/// The per-iteration random draws of the objective, made explicit so tests
/// can pin them and evaluate the objective deterministically.
#[derive(Debug, Clone)]
pub struct ObjectiveDraws {
    /// Side view shared by the distillation and lighting terms (or serving
    /// whichever of the two is active).
    pub side_pose: Option<CameraPose>,
    /// A second side view for the lighting term when the settings decouple
    /// the two side-view terms.
    pub il_pose: Option<CameraPose>,
    /// Timestep and noise for the distillation term.
    pub sds: Option<SdsSample>,
}

/// Draw the randomness for one objective evaluation. Draw order is fixed
/// (side pose, optional second side pose, then the distillation sample) so
/// manifests replay exactly.
pub fn draw_objective<R: Rng>(
    spec: &ObjectiveSpec,
    ctx: &PipelineContext,
    rng: &mut R,
) -> ObjectiveDraws {
    let s = &ctx.settings;
    let base = ctx.frontal_pose();
    let needs_side = spec.lambda_d > 0.0 || spec.lambda_il > 0.0;
    let side_pose =
        needs_side.then(|| sample_side_pose_in(rng, &base, s.theta_range, s.phi_range));
    let il_pose = (s.separate_side_views && spec.lambda_d > 0.0 && spec.lambda_il > 0.0)
        .then(|| sample_side_pose_in(rng, &base, s.theta_range, s.phi_range));
    let sds = (spec.lambda_d > 0.0).then(|| draw_sds_sample(&s.schedule, rng));
    ObjectiveDraws {
        side_pose,
        il_pose,
        sds,
    }
}

/// One evaluated objective: raw parts, weighted total, gradients for both
/// optimization stages, and the pose tags for the view-discipline audit.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub total: f64,
    pub parts: LossParts,
    /// Gradient with respect to the W+ latent entries.
    pub grad_w: Array2<f64>,
    /// Gradients with respect to the decoder's affine parameters, for the
    /// fine-tuning stage. Structural zeros of the decoder stay zero.
    pub grad_weights: Array2<f64>,
    pub grad_biases: Array1<f64>,
    pub pose_tags: Vec<PoseTagRecord>,
}

/// Evaluate the full objective with fresh randomness from `rng`.
pub fn compose_objective<R: Rng>(
    ctx: &PipelineContext,
    w: &LatentCode,
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<ObjectiveEval> {
    let draws = draw_objective(spec, ctx, rng);
    compose_objective_at(ctx, w, spec, &draws)
}

/// Evaluate the full objective at pinned draws. Deterministic: this is the
/// entry point for finite-difference checks.
pub fn compose_objective_at(
    ctx: &PipelineContext,
    w: &LatentCode,
    spec: &ObjectiveSpec,
    draws: &ObjectiveDraws,
) -> Result<ObjectiveEval> {
    spec.validate_against(ctx)?;
    evaluate_objective(ctx, &ctx.generator, w, spec, draws, false)
}

/// Shared evaluation core. `generator` may be a tuned copy (stage 2);
/// `monitor_input` forces the input-view losses to be measured even when
/// their weights are zero, so tuning runs can track them.
fn evaluate_objective(
    ctx: &PipelineContext,
    generator: &SceneGenerator,
    w: &LatentCode,
    spec: &ObjectiveSpec,
    draws: &ObjectiveDraws,
    monitor_input: bool,
) -> Result<ObjectiveEval> {
    let weights = spec.weights();
    let mut parts = LossParts::default();
    let mut grad_w = Array2::<f64>::zeros(w.values().raw_dim());
    let mut grad_weights = Array2::<f64>::zeros(generator.weights().raw_dim());
    let mut grad_biases = Array1::<f64>::zeros(generator.biases().len());
    let mut pose_tags = Vec::new();

    let accumulate = |back: crate::scene::DecodeBackward,
                          grad_w: &mut Array2<f64>,
                          grad_weights: &mut Array2<f64>,
                          grad_biases: &mut Array1<f64>| {
        *grad_w += &back.d_latent;
        *grad_weights += &back.d_weights;
        *grad_biases += &back.d_biases;
    };

    // Input-view terms: identity and reconstruction.
    let input_active = spec.lambda_id > 0.0 || spec.lambda_r > 0.0;
    if (input_active || monitor_input) && spec.input_image.is_some() {
        let input = spec.input_image.as_ref().unwrap();
        let pose = spec
            .input_pose
            .ok_or_else(|| Error::SpecViolation {
                field: "input_pose".into(),
                message: "required for input-view terms".into(),
            })?;
        let view = render(generator, w, &pose, ctx.quality())?;
        let mut d_rgb = vec![[0.0; 3]; view.pixel_count()];
        let mut terms = Vec::new();
        if spec.lambda_r > 0.0 || monitor_input {
            let (loss, g) = ctx.perceptual.reconstruction_loss_grad(view.rgb(), input)?;
            parts.reconstruction = loss;
            if spec.lambda_r > 0.0 {
                for (d, gi) in d_rgb.iter_mut().zip(&g) {
                    for c in 0..3 {
                        d[c] += spec.lambda_r * gi[c];
                    }
                }
                terms.push("reconstruction".to_string());
            }
        }
        if spec.lambda_id > 0.0 || monitor_input {
            let (loss, g) = ctx.perceptual.identity_loss_grad(view.rgb(), input)?;
            parts.identity = loss;
            if spec.lambda_id > 0.0 {
                for (d, gi) in d_rgb.iter_mut().zip(&g) {
                    for c in 0..3 {
                        d[c] += spec.lambda_id * gi[c];
                    }
                }
                terms.push("identity".to_string());
            }
        }
        if !terms.is_empty() {
            let d_zero = vec![[0.0; 3]; d_rgb.len()];
            let params = generator.decode(w)?;
            let d_params =
                render_backward_params(&params, &pose, ctx.quality(), &d_rgb, &d_zero, &d_zero)?;
            accumulate(
                generator.decode_backward(w, &d_params)?,
                &mut grad_w,
                &mut grad_weights,
                &mut grad_biases,
            );
            pose_tags.push(PoseTagRecord {
                role: "input".into(),
                terms,
                theta: pose.theta,
                phi: pose.phi,
            });
        }
    }

    // Side-view terms: distillation and lighting, sharing a render when
    // they share the pose.
    if spec.lambda_d > 0.0 || spec.lambda_il > 0.0 {
        let side_pose = draws.side_pose.ok_or_else(|| {
            Error::InvalidArgument("objective draws lack the required side pose".into())
        })?;
        let il_pose = draws.il_pose.unwrap_or(side_pose);
        let shared = draws.il_pose.is_none();

        // (pose, run distillation here, run lighting here)
        let mut passes = vec![];
        if spec.lambda_d > 0.0 {
            passes.push((side_pose, true, shared && spec.lambda_il > 0.0));
        } else {
            passes.push((side_pose, false, spec.lambda_il > 0.0));
        }
        if !shared && spec.lambda_d > 0.0 && spec.lambda_il > 0.0 {
            passes.push((il_pose, false, true));
        }

        for (pose, run_d, run_il) in passes {
            if !run_d && !run_il {
                continue;
            }
            let view = render(generator, w, &pose, ctx.quality())?;
            let mut d_rgb = vec![[0.0; 3]; view.pixel_count()];
            let mut d_normal = vec![[0.0; 3]; view.pixel_count()];
            let mut d_albedo = vec![[0.0; 3]; view.pixel_count()];
            let mut terms = Vec::new();
            if run_d {
                let sample = draws.sds.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(
                        "objective draws lack the required distillation sample".into(),
                    )
                })?;
                let prompt = spec.prompt.as_ref().expect("validated");
                let target = ctx.bank.get(prompt)?;
                let eval = sds_on_rgb(
                    view.rgb(),
                    &ctx.latent_encoder,
                    target,
                    sample.t,
                    &sample.eps,
                )?;
                parts.distillation = eval.loss;
                for (d, gi) in d_rgb.iter_mut().zip(&eval.d_rgb) {
                    for c in 0..3 {
                        d[c] += spec.lambda_d * gi[c];
                    }
                }
                terms.push("distillation".to_string());
            }
            if run_il {
                let target = spec.target_light.as_ref().expect("validated");
                let (loss, bg) = illumination_loss_grad(&view, target, ctx.settings.ridge)?;
                parts.illumination = loss;
                for p in 0..d_rgb.len() {
                    for c in 0..3 {
                        d_rgb[p][c] += spec.lambda_il * bg.d_rgb[p][c];
                        d_normal[p][c] += spec.lambda_il * bg.d_normal[p][c];
                        d_albedo[p][c] += spec.lambda_il * bg.d_albedo[p][c];
                    }
                }
                terms.push("illumination".to_string());
            }
            let params = generator.decode(w)?;
            let d_params =
                render_backward_params(&params, &pose, ctx.quality(), &d_rgb, &d_normal, &d_albedo)?;
            accumulate(
                generator.decode_backward(w, &d_params)?,
                &mut grad_w,
                &mut grad_weights,
                &mut grad_biases,
            );
            pose_tags.push(PoseTagRecord {
                role: "side".into(),
                terms,
                theta: pose.theta,
                phi: pose.phi,
            });
        }
    }

    // Latent mean pull.
    if spec.lambda_regu > 0.0 || monitor_input {
        let (raw, g) = regularization_loss_grad(w, &ctx.stats, 1.0)?;
        parts.regularization = raw;
        if spec.lambda_regu > 0.0 {
            grad_w += &(&g * spec.lambda_regu);
        }
    }

    Ok(ObjectiveEval {
        total: parts.total(&weights),
        parts,
        grad_w,
        grad_weights,
        grad_biases,
        pose_tags,
    })
}

/// Options common to both optimization stages.
#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub iters: usize,
    pub step: f64,
    pub seed: u64,
    /// Label stored in the manifest ("invert", "edit", ...).
    pub run_kind: String,
    /// How the initial latent was produced, echoed into the manifest.
    pub init_mode_label: String,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            iters: DEFAULT_STAGE1_ITERS,
            step: DEFAULT_STAGE1_STEP,
            seed: 0,
            run_kind: "custom".into(),
            init_mode_label: "explicit".into(),
        }
    }
}

impl OptimizeOptions {
    /// Stage-2 defaults.
    pub fn tuning() -> Self {
        Self {
            iters: DEFAULT_PTI_ITERS,
            step: DEFAULT_PTI_STEP,
            run_kind: "pivotal-tune".into(),
            init_mode_label: "pivot".into(),
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_kind(mut self, kind: &str) -> Self {
        self.run_kind = kind.into();
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// A finished stage-1 run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub latent: LatentCode,
    pub manifest: RunManifest,
}

/// A finished stage-2 run: the tuned generator (best-so-far by the pivot's
/// reconstruction loss) plus its manifest.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub generator: SceneGenerator,
    pub manifest: RunManifest,
}

/// Checksum over a latent's exact bit pattern.
pub fn latent_checksum(w: &LatentCode) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_u64(w.layers() as u64);
    h.write_u64(w.dim() as u64);
    for v in w.values() {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

/// The full configuration echo that `optimize_latent` embeds in its
/// manifest, exposed so the echo of a prospective run can be inspected
/// without executing it.
pub fn manifest_config(
    ctx: &PipelineContext,
    spec: &ObjectiveSpec,
    opts: &OptimizeOptions,
    init: &LatentCode,
    stage: &str,
) -> ManifestConfig {
    let s = &ctx.settings;
    ManifestConfig {
        stage: stage.into(),
        weights_seed: s.weights_seed,
        run_seed: opts.seed,
        blob_count: s.blob_count,
        layers: s.layers,
        dim: s.dim,
        image_size: s.image_size,
        quality: s.quality,
        optimizer: "adam".into(),
        adam_betas: ADAM_BETAS,
        adam_epsilon: ADAM_EPSILON,
        iters: opts.iters,
        step: opts.step,
        weights: spec.weights(),
        prompt: spec.prompt.clone(),
        prompt_targets: ctx.bank.targets().clone(),
        schedule: s.schedule,
        theta_range: s.theta_range,
        phi_range: s.phi_range,
        separate_side_views: s.separate_side_views,
        ridge: s.ridge,
        stats_samples: s.stats_samples,
        init_mode: opts.init_mode_label.clone(),
        init_latent: init.clone(),
        input_pose: spec.input_pose,
        input_image: spec.input_image.clone(),
        target_light: spec.target_light.clone(),
    }
}

/// Deterministic end-of-run measurements (see [`FinalMetrics`]).
fn compute_final_metrics(
    ctx: &PipelineContext,
    generator: &SceneGenerator,
    w: &LatentCode,
    spec: &ObjectiveSpec,
    init: Option<&LatentCode>,
) -> Result<FinalMetrics> {
    let pose = spec.input_pose.unwrap_or_else(|| ctx.frontal_pose());
    let view = render(generator, w, &pose, ctx.quality())?;
    let mut out = FinalMetrics::default();
    if let Some(input) = &spec.input_image {
        out.reconstruction = Some(ctx.perceptual.reconstruction_loss(view.rgb(), input)?);
        out.identity = ctx.perceptual.identity_loss(view.rgb(), input).ok();
        out.psnr_db = Some(psnr_rgb(view.rgb(), input)?);
    }
    if let Some(light) = &spec.target_light {
        out.illumination_l1 = illumination_loss(&view, light, ctx.settings.ridge).ok();
    }
    out.regularization = regularization_loss_grad(w, &ctx.stats, 1.0)?.0;
    if let Some(prompt) = &spec.prompt {
        let mu = &ctx.bank.get(prompt)?.mu;
        let dist = |code: &LatentCode| -> Result<f64> {
            let v = render(generator, code, &pose, ctx.quality())?;
            let z = ctx.latent_encoder.encode(v.rgb())?;
            let d = &z - mu;
            Ok(d.dot(&d).sqrt())
        };
        out.prompt_distance = Some(dist(w)?);
        if let Some(init) = init {
            out.prompt_distance_initial = Some(dist(init)?);
        }
    }
    Ok(out)
}

fn lift_to_wplus(ctx: &PipelineContext, init: &LatentCode) -> Result<LatentCode> {
    let lifted = match init.space() {
        LatentSpace::W => init.broadcast_to_wplus(ctx.settings.layers)?,
        LatentSpace::WPlus => init.clone(),
    };
    if lifted.layers() != ctx.settings.layers || lifted.dim() != ctx.settings.dim {
        return Err(Error::ShapeMismatch {
            context: "initial latent",
            expected: format!("{}x{}", ctx.settings.layers, ctx.settings.dim),
            got: format!("{}x{}", lifted.layers(), lifted.dim()),
        });
    }
    Ok(lifted)
}

fn check_finite_eval(eval: &ObjectiveEval, iteration: usize) -> Result<()> {
    if let Some(term) = eval.parts.first_non_finite() {
        return Err(Error::NonFiniteLoss {
            term: term.into(),
            iteration,
        });
    }
    if !eval.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "total".into(),
            iteration,
        });
    }
    if eval.grad_w.iter().any(|g| !g.is_finite())
        || eval.grad_weights.iter().any(|g| !g.is_finite())
        || eval.grad_biases.iter().any(|g| !g.is_finite())
    {
        return Err(Error::NonFiniteLoss {
            term: "gradient".into(),
            iteration,
        });
    }
    Ok(())
}

/// Stage 1: adaptive gradient descent over the W+ entries of `init` under
/// `spec`, with the generator frozen. Returns the optimized code and a
/// replayable manifest.
pub fn optimize_latent(
    ctx: &PipelineContext,
    spec: &ObjectiveSpec,
    init: &LatentCode,
    opts: &OptimizeOptions,
) -> Result<RunOutcome> {
    spec.validate_against(ctx)?;
    opts.validate()?;
    let init = lift_to_wplus(ctx, init)?;
    let generator_checksum = ctx.generator.weight_checksum();
    let latent_checksum_before = latent_checksum(&init);

    let start = Instant::now();
    let mut rng = seeds::stream_rng(opts.seed, seeds::stream::OPTIMIZER);
    let mut vals = init.values().clone();
    let mut adam = Adam::new(opts.step, vals.len());
    let mut iterations = Vec::with_capacity(opts.iters);
    for iteration in 0..opts.iters {
        let w = LatentCode::w_plus(vals.clone())?;
        let draws = draw_objective(spec, ctx, &mut rng);
        let eval = evaluate_objective(ctx, &ctx.generator, &w, spec, &draws, false)?;
        check_finite_eval(&eval, iteration)?;
        iterations.push(IterationRecord {
            iteration,
            parts: eval.parts,
            total: eval.total,
            pose_tags: eval.pose_tags,
            wall_clock_ms: start.elapsed().as_millis() as u64,
        });
        adam.update(
            vals.as_slice_mut().expect("standard layout"),
            eval.grad_w.as_slice().expect("standard layout"),
        );
    }
    let latent = LatentCode::w_plus(vals)?;
    assert_eq!(
        ctx.generator.weight_checksum(),
        generator_checksum,
        "stage 1 must not touch generator weights"
    );

    let final_metrics = compute_final_metrics(ctx, &ctx.generator, &latent, spec, Some(&init))?;
    let manifest = RunManifest {
        run_kind: opts.run_kind.clone(),
        config: manifest_config(ctx, spec, opts, &init, "latent"),
        iterations,
        final_latent: latent.clone(),
        final_metrics,
        generator_checksum_before: generator_checksum,
        generator_checksum_after: ctx.generator.weight_checksum(),
        latent_checksum_before,
        latent_checksum_after: latent_checksum(&latent),
        wall_clock_ms: start.elapsed().as_millis() as u64,
        artifacts: Default::default(),
        cli_config: None,
    };
    Ok(RunOutcome { latent, manifest })
}

/// Stage 2: freeze the pivot latent and fine-tune the decoder's affine
/// parameters under the same objective. Returns the best-so-far generator:
/// the iterate with the lowest pivot reconstruction loss (lowest total when
/// no input image is attached), so the returned loss never exceeds the
/// pre-tuning value. The context's generator is left untouched.
pub fn pivotal_tune(
    ctx: &PipelineContext,
    pivot: &LatentCode,
    spec: &ObjectiveSpec,
    opts: &OptimizeOptions,
) -> Result<TuneOutcome> {
    spec.validate_against(ctx)?;
    opts.validate()?;
    let pivot = lift_to_wplus(ctx, pivot)?;
    let pivot_checksum = latent_checksum(&pivot);
    let generator_checksum_before = ctx.generator.weight_checksum();
    let track_recon = spec.input_image.is_some();

    let start = Instant::now();
    let mut rng = seeds::stream_rng(opts.seed, seeds::stream::OPTIMIZER);
    let mut tuned = ctx.generator.clone();
    let n_w = tuned.weights().len();
    let n_b = tuned.biases().len();
    let mut adam = Adam::new(opts.step, n_w + n_b);
    let mut flat = vec![0.0; n_w + n_b];
    let mut grad = vec![0.0; n_w + n_b];

    let mut best: Option<(f64, SceneGenerator)> = None;
    let mut iterations = Vec::with_capacity(opts.iters);
    let consider = |key: f64, gen: &SceneGenerator, best: &mut Option<(f64, SceneGenerator)>| {
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            *best = Some((key, gen.clone()));
        }
    };

    for iteration in 0..opts.iters {
        let draws = draw_objective(spec, ctx, &mut rng);
        let eval = evaluate_objective(ctx, &tuned, &pivot, spec, &draws, true)?;
        check_finite_eval(&eval, iteration)?;
        let key = if track_recon {
            eval.parts.reconstruction
        } else {
            eval.total
        };
        consider(key, &tuned, &mut best);
        iterations.push(IterationRecord {
            iteration,
            parts: eval.parts,
            total: eval.total,
            pose_tags: eval.pose_tags,
            wall_clock_ms: start.elapsed().as_millis() as u64,
        });

        flat[..n_w].copy_from_slice(tuned.weights().as_slice().expect("standard layout"));
        flat[n_w..].copy_from_slice(tuned.biases().as_slice().expect("standard layout"));
        grad[..n_w].copy_from_slice(eval.grad_weights.as_slice().expect("standard layout"));
        grad[n_w..].copy_from_slice(eval.grad_biases.as_slice().expect("standard layout"));
        adam.update(&mut flat, &grad);
        let delta_w = Array2::from_shape_vec(
            tuned.weights().raw_dim(),
            flat[..n_w]
                .iter()
                .zip(tuned.weights().iter())
                .map(|(new, old)| new - old)
                .collect(),
        )
        .expect("shape preserved");
        let delta_b = Array1::from_iter(
            flat[n_w..]
                .iter()
                .zip(tuned.biases().iter())
                .map(|(new, old)| new - old),
        );
        tuned.apply_delta(&delta_w, &delta_b)?;
    }

    // The post-update iterate was never scored inside the loop.
    if opts.iters > 0 {
        let draws = draw_objective(spec, ctx, &mut rng);
        let eval = evaluate_objective(ctx, &tuned, &pivot, spec, &draws, true)?;
        check_finite_eval(&eval, opts.iters)?;
        let key = if track_recon {
            eval.parts.reconstruction
        } else {
            eval.total
        };
        consider(key, &tuned, &mut best);
    }
    let best_gen = best.map(|(_, g)| g).unwrap_or_else(|| tuned.clone());

    assert_eq!(
        latent_checksum(&pivot),
        pivot_checksum,
        "stage 2 must not touch the pivot latent"
    );
    assert_eq!(
        ctx.generator.weight_checksum(),
        generator_checksum_before,
        "stage 2 must not touch the original generator"
    );

    let final_metrics = compute_final_metrics(ctx, &best_gen, &pivot, spec, None)?;
    let manifest = RunManifest {
        run_kind: opts.run_kind.clone(),
        config: manifest_config(ctx, spec, opts, &pivot, "tuning"),
        iterations,
        final_latent: pivot.clone(),
        final_metrics,
        generator_checksum_before,
        generator_checksum_after: best_gen.weight_checksum(),
        latent_checksum_before: pivot_checksum,
        latent_checksum_after: latent_checksum(&pivot),
        wall_clock_ms: start.elapsed().as_millis() as u64,
        artifacts: Default::default(),
        cli_config: None,
    };
    Ok(TuneOutcome {
        generator: best_gen,
        manifest,
    })
}

/// Options for text-only generation.
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub lambda_d: f64,
    pub lambda_regu: f64,
    pub iters: usize,
    pub step: f64,
    pub seed: u64,
    /// Test hook: permit `lambda_d = 0`, turning the run into a pure
    /// mean-pull whose minimizer is the latent mean.
    pub allow_zero_distillation: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            lambda_d: DEFAULT_GENERATE_LAMBDA_D,
            lambda_regu: DEFAULT_GENERATE_LAMBDA_REGU,
            iters: DEFAULT_GENERATE_ITERS,
            step: DEFAULT_STAGE1_STEP,
            seed: 0,
            allow_zero_distillation: false,
        }
    }
}

/// Text-only generation: start at the latent mean and descend the
/// distillation-plus-mean-pull objective for `prompt`.
pub fn generate_from_text(
    ctx: &PipelineContext,
    prompt: &str,
    opts: &GenerateOptions,
) -> Result<RunOutcome> {
    ctx.bank.get(prompt)?;
    if opts.lambda_d <= 0.0 && !opts.allow_zero_distillation {
        return Err(Error::DegenerateObjective(
            "lambda_d must be positive for text-guided generation".into(),
        ));
    }
    let spec = ObjectiveSpec::generate(prompt, opts.lambda_d, opts.lambda_regu);
    let run_opts = OptimizeOptions {
        iters: opts.iters,
        step: opts.step,
        seed: opts.seed,
        run_kind: "generate".into(),
        init_mode_label: "mean".into(),
    };
    optimize_latent(ctx, &spec, &ctx.mean_latent(), &run_opts)
}

/// Which weight an ablation sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaId,
    LambdaR,
    LambdaD,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::LambdaId => "lambda_id",
            SweepAxis::LambdaR => "lambda_r",
            SweepAxis::LambdaD => "lambda_d",
        }
    }

    fn apply(&self, spec: &ObjectiveSpec, value: f64) -> ObjectiveSpec {
        let mut s = spec.clone();
        match self {
            SweepAxis::LambdaId => s.lambda_id = value,
            SweepAxis::LambdaR => s.lambda_r = value,
            SweepAxis::LambdaD => s.lambda_d = value,
        }
        s
    }
}

/// Run `optimize_latent` once per value of the swept weight, all other
/// settings and all seeds shared, so differences between cells isolate the
/// weight's effect.
pub fn ablation_sweep(
    ctx: &PipelineContext,
    base_spec: &ObjectiveSpec,
    axis: SweepAxis,
    values: &[f64],
    init: &LatentCode,
    opts: &OptimizeOptions,
) -> Result<Vec<RunOutcome>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation sweep needs at least one value".into(),
        ));
    }
    values
        .iter()
        .map(|&v| {
            let spec = axis.apply(base_spec, v);
            let cell_opts = OptimizeOptions {
                run_kind: format!("sweep:{}={v}", axis.name()),
                ..opts.clone()
            };
            optimize_latent(ctx, &spec, init, &cell_opts)
        })
        .collect()
}

/// How stage 1 chooses its starting latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitMode {
    /// The latent sample mean.
    Mean,
    /// Mean plus `scale` times the per-dimension spread, one shared draw
    /// across layers (a W-style perturbation).
    PerturbedMean { scale: f64 },
    /// A reconstruction-only warmup run from the mean.
    InvertFirst { warmup_iters: usize, step: f64 },
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::Mean
    }
}

impl InitMode {
    pub fn label(&self) -> String {
        match self {
            InitMode::Mean => "mean".into(),
            InitMode::PerturbedMean { scale } => format!("perturbed-mean({scale})"),
            InitMode::InvertFirst { warmup_iters, .. } => format!("invert-first({warmup_iters})"),
        }
    }
}

/// Resolve an [`InitMode`] into a concrete starting latent. `spec` supplies
/// the input image for the invert-first mode.
pub fn initial_latent(
    ctx: &PipelineContext,
    mode: &InitMode,
    spec: &ObjectiveSpec,
    seed: u64,
) -> Result<LatentCode> {
    match mode {
        InitMode::Mean => Ok(ctx.mean_latent()),
        InitMode::PerturbedMean { scale } => {
            if !scale.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "perturbation scale must be finite, got {scale}"
                )));
            }
            let mut rng = seeds::stream_rng(seed, seeds::stream::INIT_PERTURBATION);
            let row: Vec<f64> = (0..ctx.settings.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut vals = ctx.stats.mean.values().clone();
            for l in 0..vals.nrows() {
                for d in 0..vals.ncols() {
                    vals[(l, d)] += scale * ctx.stats.per_dim_std[(l, d)] * row[d];
                }
            }
            LatentCode::w_plus(vals)
        }
        InitMode::InvertFirst { warmup_iters, step } => {
            let (image, pose) = match (&spec.input_image, &spec.input_pose) {
                (Some(i), Some(p)) => (i.clone(), *p),
                _ => {
                    return Err(Error::SpecViolation {
                        field: "input_image/input_pose".into(),
                        message: "invert-first initialization needs an input image".into(),
                    })
                }
            };
            let warmup_spec = ObjectiveSpec::invert(image, pose);
            let warmup_opts = OptimizeOptions {
                iters: *warmup_iters,
                step: *step,
                seed,
                run_kind: "init-invert".into(),
                init_mode_label: "mean".into(),
            };
            Ok(optimize_latent(ctx, &warmup_spec, &ctx.mean_latent(), &warmup_opts)?.latent)
        }
    }
}

impl RunManifest {
    /// Rebuild the pipeline from this manifest's configuration echo and
    /// re-run it. On one platform the result's [`RunManifest::fingerprint`]
    /// matches this manifest's.
    pub fn replay(&self) -> Result<RunManifest> {
        let cfg = &self.config;
        let settings = PipelineSettings {
            weights_seed: cfg.weights_seed,
            blob_count: cfg.blob_count,
            layers: cfg.layers,
            dim: cfg.dim,
            image_size: cfg.image_size,
            quality: cfg.quality,
            schedule: cfg.schedule,
            theta_range: cfg.theta_range,
            phi_range: cfg.phi_range,
            separate_side_views: cfg.separate_side_views,
            ridge: cfg.ridge,
            stats_samples: cfg.stats_samples,
        };
        let mut ctx = PipelineContext::build(settings)?;
        ctx.bank = PromptBank::from_targets(&cfg.prompt_targets)?;
        let spec = ObjectiveSpec {
            lambda_id: cfg.weights.lambda_id,
            lambda_r: cfg.weights.lambda_r,
            lambda_d: cfg.weights.lambda_d,
            lambda_il: cfg.weights.lambda_il,
            lambda_regu: cfg.weights.lambda_regu,
            prompt: cfg.prompt.clone(),
            target_light: cfg.target_light.clone(),
            input_image: cfg.input_image.clone(),
            input_pose: cfg.input_pose,
        };
        let opts = OptimizeOptions {
            iters: cfg.iters,
            step: cfg.step,
            seed: cfg.run_seed,
            run_kind: self.run_kind.clone(),
            init_mode_label: cfg.init_mode.clone(),
        };
        match cfg.stage.as_str() {
            "latent" => Ok(optimize_latent(&ctx, &spec, &cfg.init_latent, &opts)?.manifest),
            "tuning" => Ok(pivotal_tune(&ctx, &cfg.init_latent, &spec, &opts)?.manifest),
            other => Err(Error::InvalidArgument(format!(
                "manifest stage {other:?} is not replayable"
            ))),
        }
    }
}
