//! Command execution: build the pipeline from a validated configuration,
//! run it, and write the artifact set.
//!
//! Every artifact directory receives exactly four files — `manifest.json`,
//! `losses.csv`, `grid.png`, `latent.json` — and the manifest's `artifacts`
//! map records the sha256 of each sibling. A sweep writes one such
//! directory per cell under the output directory.

use std::path::{Path, PathBuf};

use sculpt_core::lighting::{estimate_lighting, Frame, SHLighting};
use sculpt_core::pipeline::{
    ablation_sweep, generate_from_text, initial_latent, optimize_latent, pivotal_tune, sha256_hex,
    GenerateOptions, ObjectiveSpec, OptimizeOptions, PipelineContext, PipelineSettings,
    RunManifest, RunOutcome,
};
use sculpt_core::scene::{render, CameraPose, RenderQuality, RenderedView, SceneGenerator};
use sculpt_core::diffusion::DiffusionSchedule;
use sculpt_core::{seeds, LatentCode};

use crate::config::{Command, LightConfig, RunConfig};
use crate::grid::{default_grid_poses, export_view_grid};
use crate::{config_error, pipeline_error, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSSES_FILE: &str = "losses.csv";
pub const GRID_FILE: &str = "grid.png";
pub const LATENT_FILE: &str = "latent.json";

/// Paths of everything a run wrote, in execution order.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// One manifest per artifact directory (several for sweeps/tuning).
    pub manifests: Vec<PathBuf>,
}

/// The input image resolved into pixels and a pose; the rendered view is
/// kept when the source was a latent, for estimated-light targets.
struct ResolvedInput {
    pixels: Vec<[f64; 3]>,
    pose: CameraPose,
    view: Option<RenderedView>,
}

fn settings_from(config: &RunConfig) -> PipelineSettings {
    PipelineSettings {
        weights_seed: config.weights_seed,
        blob_count: config.blob_count,
        layers: config.layers,
        dim: config.dim,
        image_size: config.image_size,
        quality: RenderQuality {
            samples_per_ray: config.samples_per_ray,
            ..RenderQuality::default()
        },
        schedule: DiffusionSchedule {
            t_min: config.t_min,
            t_max: config.t_max,
        },
        theta_range: config.theta_range,
        phi_range: config.phi_range,
        separate_side_views: config.separate_side_views,
        ridge: config.ridge,
        stats_samples: config.stats_samples,
    }
}

fn load_png(path: &Path, expect: usize) -> Result<Vec<[f64; 3]>, CliError> {
    let img = image::open(path)
        .map_err(|e| CliError::config("input.image", format!("cannot read {path:?}: {e}")))?
        .into_rgb8();
    if img.width() as usize != expect || img.height() as usize != expect {
        return Err(CliError::config(
            "input.image",
            format!(
                "{path:?} is {}x{}, the run uses {expect}x{expect}",
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(img
        .pixels()
        .map(|p| [p.0[0], p.0[1], p.0[2]].map(|v| v as f64 / 255.0))
        .collect())
}

fn resolve_input(config: &RunConfig, ctx: &PipelineContext) -> Result<Option<ResolvedInput>, CliError> {
    let Some(input) = &config.input else {
        return Ok(None);
    };
    let base = ctx.frontal_pose();
    let pose = CameraPose::new(
        input.theta,
        input.phi,
        base.radius,
        base.fov_y,
        config.image_size,
    )
    .map_err(config_error)?;

    let resolved = if let Some(path) = &input.image {
        ResolvedInput {
            pixels: load_png(path, config.image_size)?,
            pose,
            view: None,
        }
    } else {
        let code = if let Some(path) = &input.latent {
            LatentCode::load(path)
                .map_err(|e| CliError::config("input.latent", e.to_string()))?
        } else {
            let seed = input.latent_seed.expect("validated: one source set");
            let mut rng = seeds::stream_rng(seed, seeds::stream::INPUT_FIXTURE);
            ctx.generator.sample_latent(&mut rng)
        };
        let view = render(&ctx.generator, &code, &pose, ctx.quality()).map_err(pipeline_error)?;
        ResolvedInput {
            pixels: view.rgb().to_vec(),
            pose,
            view: Some(view),
        }
    };
    Ok(Some(resolved))
}

fn resolve_light(
    config: &LightConfig,
    input: Option<&ResolvedInput>,
    ridge: f64,
) -> Result<SHLighting, CliError> {
    if let Some(coeffs) = config.coeffs {
        return SHLighting::new(Frame::World, coeffs).map_err(config_error);
    }
    if let Some(level) = config.ambient {
        return Ok(SHLighting::ambient(Frame::World, level));
    }
    let view = input
        .and_then(|i| i.view.as_ref())
        .expect("validated: estimated light implies a rendered input");
    estimate_lighting(view, ridge).map_err(pipeline_error)
}

fn load_bank(config: &RunConfig, ctx: &mut PipelineContext) -> Result<(), CliError> {
    for (name, entry) in &config.prompts {
        let pixels = load_png(&entry.image, config.image_size).map_err(|e| match e {
            CliError::Config { message, .. } => {
                CliError::config(format!("prompts.{name}.image"), message)
            }
            other => other,
        })?;
        let encoder = &ctx.latent_encoder;
        let target = sculpt_core::diffusion::PromptTarget::new(
            encoder.encode(&pixels).map_err(config_error)?,
            entry.spread,
        )
        .map_err(config_error)?;
        ctx.bank.insert(name, target);
    }
    Ok(())
}

fn objective_from(config: &RunConfig, input: Option<&ResolvedInput>, light: Option<SHLighting>) -> ObjectiveSpec {
    ObjectiveSpec {
        lambda_id: config.lambda_id,
        lambda_r: config.lambda_r,
        lambda_d: config.lambda_d,
        lambda_il: config.lambda_il,
        lambda_regu: config.lambda_regu,
        prompt: config.prompt.clone(),
        target_light: light,
        input_image: input.map(|i| i.pixels.clone()),
        input_pose: input.map(|i| i.pose),
    }
}

/// Write the four artifacts for one finished run into `dir`, filling the
/// manifest's artifact hashes and configuration echo. `generator` is the
/// decoder the grid should be rendered with (the tuned copy for stage-2
/// manifests).
pub fn write_artifacts(
    dir: &Path,
    mut manifest: RunManifest,
    latent: &LatentCode,
    generator: &SceneGenerator,
    config: &RunConfig,
) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::config_general(format!("cannot create {dir:?}: {e}")))?;

    let losses = manifest.loss_table_csv();
    let losses_path = dir.join(LOSSES_FILE);
    std::fs::write(&losses_path, &losses)
        .map_err(|e| CliError::config_general(format!("cannot write {losses_path:?}: {e}")))?;

    let latent_path = dir.join(LATENT_FILE);
    latent.save(&latent_path).map_err(pipeline_error)?;

    let quality = RenderQuality {
        samples_per_ray: config.samples_per_ray,
        ..RenderQuality::default()
    };
    let poses = default_grid_poses(config.image_size, config.phi_range, config.grid_poses)
        .map_err(config_error)?;
    let grid_path = dir.join(GRID_FILE);
    export_view_grid(generator, latent, &poses, &quality, &grid_path).map_err(pipeline_error)?;

    for name in [LOSSES_FILE, GRID_FILE, LATENT_FILE] {
        let bytes = std::fs::read(dir.join(name))
            .map_err(|e| CliError::config_general(format!("cannot hash {name}: {e}")))?;
        manifest.artifacts.insert(name.to_string(), sha256_hex(&bytes));
    }
    manifest.cli_config =
        Some(serde_json::to_value(config).expect("config serialization cannot fail"));

    let manifest_path = dir.join(MANIFEST_FILE);
    manifest.save(&manifest_path).map_err(pipeline_error)?;
    Ok(manifest_path)
}

fn stage1_options(config: &RunConfig) -> OptimizeOptions {
    OptimizeOptions {
        iters: config.iters,
        step: config.step,
        seed: config.seed,
        run_kind: config.command.name().into(),
        init_mode_label: config.init.label(),
    }
}

/// Execute a validated configuration end to end and write its artifacts.
pub fn run_command(config: &RunConfig) -> Result<RunSummary, CliError> {
    let mut ctx = PipelineContext::build(settings_from(config)).map_err(config_error)?;
    load_bank(config, &mut ctx)?;
    let input = resolve_input(config, &ctx)?;
    let light = config
        .target_light
        .as_ref()
        .map(|l| resolve_light(l, input.as_ref(), config.ridge))
        .transpose()?;

    let mut manifests = Vec::new();
    match config.command {
        Command::Generate => {
            let opts = GenerateOptions {
                lambda_d: config.lambda_d,
                lambda_regu: config.lambda_regu,
                iters: config.iters,
                step: config.step,
                seed: config.seed,
                allow_zero_distillation: false,
            };
            let prompt = config.prompt.as_deref().expect("validated");
            let outcome = generate_from_text(&ctx, prompt, &opts).map_err(pipeline_error)?;
            manifests.push(write_artifacts(
                &config.out_dir,
                outcome.manifest,
                &outcome.latent,
                &ctx.generator,
                config,
            )?);
        }
        Command::Sweep => {
            let sweep = config.sweep.as_ref().expect("validated");
            let spec = objective_from(config, input.as_ref(), light);
            spec.validate_against(&ctx).map_err(config_error)?;
            let init =
                initial_latent(&ctx, &config.init, &spec, config.seed).map_err(pipeline_error)?;
            let outcomes = ablation_sweep(&ctx, &spec, sweep.axis, &sweep.values, &init, &stage1_options(config))
                .map_err(pipeline_error)?;
            for (i, (outcome, value)) in outcomes.into_iter().zip(&sweep.values).enumerate() {
                let cell_dir = config
                    .out_dir
                    .join(format!("cell-{i:02}-{}-{value}", sweep.axis.name()));
                manifests.push(write_artifacts(
                    &cell_dir,
                    outcome.manifest,
                    &outcome.latent,
                    &ctx.generator,
                    config,
                )?);
            }
        }
        Command::Invert | Command::Edit | Command::Relight => {
            let spec = objective_from(config, input.as_ref(), light);
            spec.validate_against(&ctx).map_err(config_error)?;
            let init =
                initial_latent(&ctx, &config.init, &spec, config.seed).map_err(pipeline_error)?;
            let RunOutcome { latent, manifest } =
                optimize_latent(&ctx, &spec, &init, &stage1_options(config))
                    .map_err(pipeline_error)?;
            manifests.push(write_artifacts(
                &config.out_dir,
                manifest,
                &latent,
                &ctx.generator,
                config,
            )?);
            if config.tune {
                let opts = OptimizeOptions {
                    iters: config.tune_iters,
                    step: config.tune_step,
                    seed: config.seed,
                    run_kind: format!("{}-tune", config.command.name()),
                    init_mode_label: "pivot".into(),
                };
                let tuned = pivotal_tune(&ctx, &latent, &spec, &opts).map_err(pipeline_error)?;
                manifests.push(write_artifacts(
                    &config.out_dir.join("tuned"),
                    tuned.manifest,
                    &latent,
                    &tuned.generator,
                    config,
                )?);
            }
        }
    }
    Ok(RunSummary {
        out_dir: config.out_dir.clone(),
        manifests,
    })
}
