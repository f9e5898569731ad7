//! Run configuration: the JSON document, its per-command defaults, override
//! precedence, and fail-fast validation.
//!
//! Parsing is strict: unknown keys are rejected, every constraint violation
//! names the offending field, and any static reason a run would later fail
//! (missing file, unknown prompt, out-of-range weight, malformed pose) is
//! reported here rather than mid-run. The resolved [`RunConfig`] has every
//! field filled in; serializing it yields a document that parses back to an
//! identical configuration, and the runner echoes it into the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sculpt_core::diffusion::{DiffusionSchedule, POOL_GRID};
use sculpt_core::pipeline::{
    InitMode, SweepAxis, DEFAULT_EDIT_WEIGHTS, DEFAULT_GENERATE_ITERS, DEFAULT_GENERATE_LAMBDA_D,
    DEFAULT_GENERATE_LAMBDA_REGU, DEFAULT_LAMBDA_IL, DEFAULT_PTI_ITERS, DEFAULT_PTI_STEP,
    DEFAULT_RIDGE, DEFAULT_STAGE1_ITERS, DEFAULT_STAGE1_STEP, DEFAULT_STATS_SAMPLES,
};
use sculpt_core::scene::{default_side_range, CameraPose};

use crate::CliError;

/// The five run commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Fit a latent to an input image (reconstruction/identity terms only).
    Invert,
    /// Prompt-guided editing: all preservation terms plus distillation.
    Edit,
    /// Drive the scene toward a target illumination, no distillation.
    Relight,
    /// Text-only generation from the latent mean.
    Generate,
    /// One run per value of a swept weight, sharing all other settings.
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Invert => "invert",
            Command::Edit => "edit",
            Command::Relight => "relight",
            Command::Generate => "generate",
            Command::Sweep => "sweep",
        }
    }
}

/// Where the input image comes from. Exactly one of `image`, `latent`,
/// `latent_seed` must be set; `theta`/`phi` give the camera angles the
/// input was captured from (default: frontal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Path to a PNG matching the run's image size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    /// Path to a latent file; the input is its render.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<PathBuf>,
    /// Seeded draw from the generator's latent distribution; the input is
    /// its render. This is the self-contained fixture mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_seed: Option<u64>,
    #[serde(default = "frontal_angle")]
    pub theta: f64,
    #[serde(default = "frontal_angle")]
    pub phi: f64,
}

fn frontal_angle() -> f64 {
    std::f64::consts::FRAC_PI_2
}

impl InputConfig {
    pub fn from_latent_seed(seed: u64) -> Self {
        Self {
            image: None,
            latent: None,
            latent_seed: Some(seed),
            theta: frontal_angle(),
            phi: frontal_angle(),
        }
    }

    /// True when the input is rendered (and so carries normal buffers the
    /// estimated-light mode can use).
    pub fn is_rendered(&self) -> bool {
        self.latent.is_some() || self.latent_seed.is_some()
    }

    fn validate(&self, image_size: usize) -> Result<(), CliError> {
        let sources =
            self.image.is_some() as u8 + self.latent.is_some() as u8 + self.latent_seed.is_some() as u8;
        if sources != 1 {
            return Err(CliError::config(
                "input",
                "exactly one of image, latent, latent_seed must be set",
            ));
        }
        for (field, path) in [("input.image", &self.image), ("input.latent", &self.latent)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(CliError::config(field, format!("file {p:?} does not exist")));
                }
            }
        }
        let base = CameraPose::frontal(image_size);
        CameraPose::new(self.theta, self.phi, base.radius, base.fov_y, image_size)
            .map_err(|e| CliError::config("input.theta/phi", e.to_string()))?;
        Ok(())
    }
}

/// The target illumination for relighting. Exactly one of `coeffs`,
/// `ambient`, `estimated` must be active; coefficients are world-frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightConfig {
    /// Nine world-frame spherical-harmonic coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<[f64; 9]>,
    /// A flat environment at the given level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<f64>,
    /// Use the light estimated from the input render (an already-satisfied
    /// target; requires a latent-based input).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub estimated: bool,
}

impl LightConfig {
    fn validate(&self, input: Option<&InputConfig>) -> Result<(), CliError> {
        let modes = self.coeffs.is_some() as u8 + self.ambient.is_some() as u8 + self.estimated as u8;
        if modes != 1 {
            return Err(CliError::config(
                "target_light",
                "exactly one of coeffs, ambient, estimated must be set",
            ));
        }
        if let Some(c) = &self.coeffs {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(CliError::config(
                    "target_light.coeffs",
                    "coefficients must be finite",
                ));
            }
        }
        if let Some(a) = self.ambient {
            if !a.is_finite() {
                return Err(CliError::config("target_light.ambient", "must be finite"));
            }
        }
        if self.estimated && !input.map(InputConfig::is_rendered).unwrap_or(false) {
            return Err(CliError::config(
                "target_light.estimated",
                "requires a latent or latent_seed input (the estimate needs rendered normals)",
            ));
        }
        Ok(())
    }
}

/// One prompt-table entry: an exemplar image standing in for the prompt's
/// text embedding, and the spread of its target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEntry {
    pub image: PathBuf,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_spread() -> f64 {
    1.0
}

/// The swept weight and its values, one run per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// A fully resolved run configuration: every field concrete, every default
/// applied. Serializing and reparsing yields an identical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub out_dir: PathBuf,
    /// Seed for the run's random draws (side poses, timesteps, noise).
    pub seed: u64,
    /// Seed for every frozen component (generator, encoders, statistics).
    pub weights_seed: u64,
    pub iters: usize,
    pub step: f64,
    pub image_size: usize,
    pub samples_per_ray: usize,
    pub blob_count: usize,
    pub layers: usize,
    pub dim: usize,
    pub theta_range: (f64, f64),
    pub phi_range: (f64, f64),
    pub separate_side_views: bool,
    pub ridge: f64,
    pub stats_samples: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub lambda_id: f64,
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub lambda_il: f64,
    pub lambda_regu: f64,
    pub prompt: Option<String>,
    pub prompts: BTreeMap<String, PromptEntry>,
    pub input: Option<InputConfig>,
    pub target_light: Option<LightConfig>,
    pub init: InitMode,
    /// Poses in the exported view grid, spanning the azimuth range.
    pub grid_poses: usize,
    /// Run the decoder fine-tuning stage after the latent stage.
    pub tune: bool,
    pub tune_iters: usize,
    pub tune_step: f64,
    pub sweep: Option<SweepConfig>,
}

/// The raw configuration document: every field optional, unknown keys
/// rejected. Field names match [`RunConfig`] exactly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub command: Option<Command>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub weights_seed: Option<u64>,
    pub iters: Option<usize>,
    pub step: Option<f64>,
    pub image_size: Option<usize>,
    pub samples_per_ray: Option<usize>,
    pub blob_count: Option<usize>,
    pub layers: Option<usize>,
    pub dim: Option<usize>,
    pub theta_range: Option<(f64, f64)>,
    pub phi_range: Option<(f64, f64)>,
    pub separate_side_views: Option<bool>,
    pub ridge: Option<f64>,
    pub stats_samples: Option<usize>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub lambda_id: Option<f64>,
    pub lambda_r: Option<f64>,
    pub lambda_d: Option<f64>,
    pub lambda_il: Option<f64>,
    pub lambda_regu: Option<f64>,
    pub prompt: Option<String>,
    pub prompts: Option<BTreeMap<String, PromptEntry>>,
    pub input: Option<InputConfig>,
    pub target_light: Option<LightConfig>,
    pub init: Option<InitMode>,
    pub grid_poses: Option<usize>,
    pub tune: Option<bool>,
    pub tune_iters: Option<usize>,
    pub tune_step: Option<f64>,
    pub sweep: Option<SweepConfig>,
}

/// Command-line overrides. Anything set here wins over the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub prompt: Option<String>,
    pub iters: Option<usize>,
    pub step: Option<f64>,
    pub image_size: Option<usize>,
    /// Shorthand for a frontal `latent_seed` input.
    pub latent_seed: Option<u64>,
    pub tune: bool,
}

/// Per-command default weights `(id, r, d, il, regu)`. The lighting weight
/// defaults on whenever a target light is configured.
fn default_weights(command: Command, has_target_light: bool) -> (f64, f64, f64, f64, f64) {
    let (id, r, d) = DEFAULT_EDIT_WEIGHTS;
    let il = if has_target_light { DEFAULT_LAMBDA_IL } else { 0.0 };
    match command {
        Command::Invert => (0.0, 1.0, 0.0, 0.0, 0.0),
        Command::Edit | Command::Sweep => (id, r, d, il, 0.0),
        Command::Relight => (id, r, 0.0, DEFAULT_LAMBDA_IL, 0.0),
        Command::Generate => (
            0.0,
            0.0,
            DEFAULT_GENERATE_LAMBDA_D,
            0.0,
            DEFAULT_GENERATE_LAMBDA_REGU,
        ),
    }
}

fn default_iters(command: Command) -> usize {
    match command {
        Command::Generate => DEFAULT_GENERATE_ITERS,
        _ => DEFAULT_STAGE1_ITERS,
    }
}

/// Rebase a relative path onto the config file's directory so configs work
/// regardless of the invocation directory.
fn rebase(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Parse a config file (if any), apply overrides, fill defaults, validate.
pub fn parse_config(
    command: Command,
    file: Option<&Path>,
    overrides: &Overrides,
) -> Result<RunConfig, CliError> {
    let (raw, base_dir) = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config("config", format!("cannot read {path:?}: {e}"))
            })?;
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            (parse_raw(&text)?, base)
        }
        None => (RawConfig::default(), PathBuf::from(".")),
    };
    resolve_config(command, raw, &base_dir, overrides)
}

/// Parse a config document from a string, with paths resolved against
/// `base_dir`.
pub fn parse_config_str(
    command: Command,
    text: &str,
    base_dir: &Path,
    overrides: &Overrides,
) -> Result<RunConfig, CliError> {
    resolve_config(command, parse_raw(text)?, base_dir, overrides)
}

fn parse_raw(text: &str) -> Result<RawConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::config_general(format!("invalid config: {e}")))
}

/// Fill defaults, apply precedence (flags over file over defaults), rebase
/// paths, and validate everything statically checkable.
pub fn resolve_config(
    command: Command,
    mut raw: RawConfig,
    base_dir: &Path,
    overrides: &Overrides,
) -> Result<RunConfig, CliError> {
    if let Some(file_command) = raw.command {
        if file_command != command {
            return Err(CliError::config(
                "command",
                format!(
                    "config file says {:?} but the {:?} command was invoked",
                    file_command.name(),
                    command.name()
                ),
            ));
        }
    }

    // Flag precedence.
    if let Some(v) = overrides.seed {
        raw.seed = Some(v);
    }
    if let Some(v) = &overrides.out_dir {
        raw.out_dir = Some(v.clone());
    }
    if let Some(v) = &overrides.prompt {
        raw.prompt = Some(v.clone());
    }
    if let Some(v) = overrides.iters {
        raw.iters = Some(v);
    }
    if let Some(v) = overrides.step {
        raw.step = Some(v);
    }
    if let Some(v) = overrides.image_size {
        raw.image_size = Some(v);
    }
    if let Some(seed) = overrides.latent_seed {
        raw.input = Some(InputConfig::from_latent_seed(seed));
    }
    if overrides.tune {
        raw.tune = Some(true);
    }

    let target_light = raw.target_light;
    let (d_id, d_r, d_d, d_il, d_regu) = default_weights(command, target_light.is_some());
    let side_range = default_side_range();
    let schedule = DiffusionSchedule::default();

    let mut prompts = raw.prompts.unwrap_or_default();
    for entry in prompts.values_mut() {
        entry.image = rebase(base_dir, std::mem::take(&mut entry.image));
    }
    let mut input = raw.input;
    if let Some(i) = &mut input {
        if let Some(p) = &mut i.image {
            *p = rebase(base_dir, std::mem::take(p));
        }
        if let Some(p) = &mut i.latent {
            *p = rebase(base_dir, std::mem::take(p));
        }
    }

    let config = RunConfig {
        command,
        out_dir: rebase(
            base_dir,
            raw.out_dir.unwrap_or_else(|| PathBuf::from("run-artifacts")),
        ),
        seed: raw.seed.unwrap_or(0),
        weights_seed: raw.weights_seed.unwrap_or(0),
        iters: raw.iters.unwrap_or_else(|| default_iters(command)),
        step: raw.step.unwrap_or(DEFAULT_STAGE1_STEP),
        image_size: raw.image_size.unwrap_or(64),
        samples_per_ray: raw.samples_per_ray.unwrap_or(32),
        blob_count: raw.blob_count.unwrap_or(8),
        layers: raw.layers.unwrap_or(4),
        dim: raw.dim.unwrap_or(64),
        theta_range: raw.theta_range.unwrap_or(side_range),
        phi_range: raw.phi_range.unwrap_or(side_range),
        separate_side_views: raw.separate_side_views.unwrap_or(false),
        ridge: raw.ridge.unwrap_or(DEFAULT_RIDGE),
        stats_samples: raw.stats_samples.unwrap_or(DEFAULT_STATS_SAMPLES),
        t_min: raw.t_min.unwrap_or(schedule.t_min),
        t_max: raw.t_max.unwrap_or(schedule.t_max),
        lambda_id: raw.lambda_id.unwrap_or(d_id),
        lambda_r: raw.lambda_r.unwrap_or(d_r),
        lambda_d: raw.lambda_d.unwrap_or(d_d),
        lambda_il: raw.lambda_il.unwrap_or(d_il),
        lambda_regu: raw.lambda_regu.unwrap_or(d_regu),
        prompt: raw.prompt,
        prompts,
        input,
        target_light,
        init: raw.init.unwrap_or_default(),
        grid_poses: raw.grid_poses.unwrap_or(5),
        tune: raw.tune.unwrap_or(false),
        tune_iters: raw.tune_iters.unwrap_or(DEFAULT_PTI_ITERS),
        tune_step: raw.tune_step.unwrap_or(DEFAULT_PTI_STEP),
        sweep: raw.sweep,
    };
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Every static check the runner would otherwise hit mid-run: field
    /// ranges, required/forbidden attachments per command, file existence,
    /// prompt membership.
    pub fn validate(&self) -> Result<(), CliError> {

        for (field, v) in [
            ("lambda_id", self.lambda_id),
            ("lambda_r", self.lambda_r),
            ("lambda_d", self.lambda_d),
            ("lambda_il", self.lambda_il),
            ("lambda_regu", self.lambda_regu),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CliError::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (field, v) in [("step", self.step), ("tune_step", self.tune_step)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(CliError::config(field, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.image_size == 0 || self.image_size % POOL_GRID != 0 {
            return Err(CliError::config(
                "image_size",
                format!("must be a positive multiple of {POOL_GRID}, got {}", self.image_size),
            ));
        }
        for (field, v) in [
            ("samples_per_ray", self.samples_per_ray),
            ("blob_count", self.blob_count),
            ("layers", self.layers),
            ("dim", self.dim),
            ("grid_poses", self.grid_poses),
        ] {
            if v == 0 {
                return Err(CliError::config(field, "must be at least 1".to_string()));
            }
        }
        if self.stats_samples < 2 {
            return Err(CliError::config(
                "stats_samples",
                format!("must be at least 2, got {}", self.stats_samples),
            ));
        }
        DiffusionSchedule {
            t_min: self.t_min,
            t_max: self.t_max,
        }
        .validate()
        .map_err(|e| CliError::config("t_min/t_max", e.to_string()))?;
        for (field, (lo, hi)) in [
            ("theta_range", self.theta_range),
            ("phi_range", self.phi_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CliError::config(
                    field,
                    format!("must be a finite nonempty interval, got [{lo}, {hi}]"),
                ));
            }
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return Err(CliError::config("ridge", format!("must be finite and >= 0, got {}", self.ridge)));
        }

        // Prompt table entries and membership.
        for (name, entry) in &self.prompts {
            if !entry.image.is_file() {
                return Err(CliError::config(
                    format!("prompts.{name}.image"),
                    format!("file {:?} does not exist", entry.image),
                ));
            }
            if !entry.spread.is_finite() || entry.spread <= 0.0 {
                return Err(CliError::config(
                    format!("prompts.{name}.spread"),
                    format!("must be finite and > 0, got {}", entry.spread),
                ));
            }
        }
        if let Some(prompt) = &self.prompt {
            if !self.prompts.contains_key(prompt) {
                return Err(CliError::config("prompt", format!("unknown prompt {prompt:?}")));
            }
        }

        if let Some(input) = &self.input {
            input.validate(self.image_size)?;
        }
        if let Some(light) = &self.target_light {
            light.validate(self.input.as_ref())?;
        }
        if let InitMode::PerturbedMean { scale } = &self.init {
            if !scale.is_finite() {
                return Err(CliError::config("init.scale", format!("must be finite, got {scale}")));
            }
        }

        // Per-command shape first, so rejections carry the most specific
        // field names.
        match self.command {
            Command::Invert => {
                if self.input.is_none() {
                    return Err(CliError::config("input", "invert requires an input image"));
                }
                if self.lambda_d > 0.0 {
                    return Err(CliError::config("lambda_d", "invert uses reconstruction/identity terms only"));
                }
                if self.lambda_il > 0.0 {
                    return Err(CliError::config("lambda_il", "invert uses reconstruction/identity terms only"));
                }
                if self.lambda_id == 0.0 && self.lambda_r == 0.0 {
                    return Err(CliError::config("lambda_r", "invert needs lambda_id or lambda_r > 0"));
                }
            }
            Command::Edit => {
                if self.prompt.is_none() {
                    return Err(CliError::config("prompt", "edit requires a prompt"));
                }
                if self.input.is_none() {
                    return Err(CliError::config("input", "edit requires an input image"));
                }
                if self.lambda_d == 0.0 {
                    return Err(CliError::config("lambda_d", "edit requires lambda_d > 0"));
                }
            }
            Command::Relight => {
                if self.input.is_none() {
                    return Err(CliError::config("input", "relight requires an input image"));
                }
                if self.target_light.is_none() {
                    return Err(CliError::config("target_light", "relight requires a target light"));
                }
                if self.lambda_d > 0.0 {
                    return Err(CliError::config("lambda_d", "relight runs without distillation"));
                }
                if self.lambda_il == 0.0 {
                    return Err(CliError::config("lambda_il", "relight requires lambda_il > 0"));
                }
            }
            Command::Generate => {
                if self.prompt.is_none() {
                    return Err(CliError::config("prompt", "generate requires a prompt"));
                }
                if self.input.is_some() {
                    return Err(CliError::config("input", "generate is text-only; remove the input"));
                }
                if self.lambda_d == 0.0 {
                    return Err(CliError::config("lambda_d", "generate requires lambda_d > 0"));
                }
                if self.lambda_id > 0.0 || self.lambda_r > 0.0 {
                    return Err(CliError::config(
                        "lambda_id/lambda_r",
                        "generate has no input image to preserve",
                    ));
                }
                if self.lambda_il > 0.0 {
                    return Err(CliError::config("lambda_il", "generate does not take a lighting term"));
                }
                if self.tune {
                    return Err(CliError::config("tune", "generate has no input to tune against"));
                }
            }
            Command::Sweep => {
                let sweep = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| CliError::config("sweep", "sweep requires axis and values"))?;
                if sweep.values.is_empty() {
                    return Err(CliError::config("sweep.values", "needs at least one value"));
                }
                if sweep.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(CliError::config("sweep.values", "values must be finite and >= 0"));
                }
                if self.input.is_none() {
                    return Err(CliError::config("input", "sweep requires an input image"));
                }
                if self.tune {
                    return Err(CliError::config("tune", "sweep cells run the latent stage only"));
                }
                // Every cell must be statically valid once its value is
                // substituted in.
                for &v in &sweep.values {
                    let needs_prompt = match sweep.axis {
                        SweepAxis::LambdaD => v > 0.0,
                        _ => self.lambda_d > 0.0,
                    };
                    if needs_prompt && self.prompt.is_none() {
                        return Err(CliError::config(
                            "prompt",
                            format!("required by the {}={v} sweep cell", sweep.axis.name()),
                        ));
                    }
                }
            }
        }
        if self.sweep.is_some() && self.command != Command::Sweep {
            return Err(CliError::config("sweep", "only valid with the sweep command"));
        }
        if self.tune && self.input.is_none() {
            return Err(CliError::config("tune", "decoder tuning requires an input image"));
        }

        // Cross-field requirements shared by all commands.
        if self.lambda_d > 0.0 && self.prompt.is_none() {
            return Err(CliError::config("prompt", "required when lambda_d > 0"));
        }
        if self.lambda_il > 0.0 && self.target_light.is_none() {
            return Err(CliError::config("target_light", "required when lambda_il > 0"));
        }
        if (self.lambda_id > 0.0 || self.lambda_r > 0.0) && self.input.is_none() {
            return Err(CliError::config("input", "required when lambda_id > 0 or lambda_r > 0"));
        }
        if matches!(self.init, InitMode::InvertFirst { .. }) && self.input.is_none() {
            return Err(CliError::config("input", "required by invert-first initialization"));
        }
        Ok(())
    }

    /// The documented defaults for a command, as a resolved config (no
    /// input/prompt attachments).
    pub fn defaults(command: Command) -> RunConfig {
        // Defaults never fail validation-independent resolution.
        let raw = RawConfig::default();
        let (d_id, d_r, d_d, d_il, d_regu) = default_weights(command, false);
        let side_range = default_side_range();
        let schedule = DiffusionSchedule::default();
        RunConfig {
            command,
            out_dir: PathBuf::from("run-artifacts"),
            seed: 0,
            weights_seed: 0,
            iters: default_iters(command),
            step: DEFAULT_STAGE1_STEP,
            image_size: 64,
            samples_per_ray: 32,
            blob_count: 8,
            layers: 4,
            dim: 64,
            theta_range: side_range,
            phi_range: side_range,
            separate_side_views: false,
            ridge: DEFAULT_RIDGE,
            stats_samples: DEFAULT_STATS_SAMPLES,
            t_min: schedule.t_min,
            t_max: schedule.t_max,
            lambda_id: d_id,
            lambda_r: d_r,
            lambda_d: d_d,
            lambda_il: d_il,
            lambda_regu: d_regu,
            prompt: raw.prompt,
            prompts: BTreeMap::new(),
            input: None,
            target_light: None,
            init: InitMode::default(),
            grid_poses: 5,
            tune: false,
            tune_iters: DEFAULT_PTI_ITERS,
            tune_step: DEFAULT_PTI_STEP,
            sweep: None,
        }
    }

    /// The effective config as a JSON document; reparsing it reproduces
    /// this config exactly.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}
