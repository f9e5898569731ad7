//! Analytic score distillation: a frozen linear image-to-latent encoder, a
//! cosine noise schedule, per-prompt Gaussian latent targets with a
//! closed-form minimum-MSE denoiser, and the distillation gradient that
//! pulls renders toward a prompt's target distribution.
//!
//! The denoiser predicts the noise added to a latent drawn from the prompt's
//! Gaussian `N(mu, spread^2 I)`. Because everything is Gaussian the optimal
//! predictor is affine in the noised latent, so no learned network is
//! needed; the distillation machinery on top of it (timestep weighting,
//! residual gradient, skipping the denoiser Jacobian) is unchanged from the
//! learned setting.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::scene::{render, render_backward, CameraPose, RenderQuality, SceneGenerator};
use crate::seeds;

/// Width of the image latent `z`.
pub const LATENT_DIM: usize = 16;
/// The encoder average-pools images onto this grid before its linear map.
pub const POOL_GRID: usize = 16;

/// Frozen linear map from an image to a compact latent: average-pool to a
/// 16x16x3 grid, then one bias-free random linear layer. Linearity makes
/// its Jacobian exact and cheap, which the distillation gradient exploits.
pub struct LatentImageEncoder {
    input_size: usize,
    pool: usize,
    /// Row-major (LATENT_DIM x POOL_GRID*POOL_GRID*3).
    w: Array2<f64>,
}

impl LatentImageEncoder {
    pub fn new(weights_seed: u64, input_size: usize) -> Result<Self> {
        if input_size == 0 || input_size % POOL_GRID != 0 {
            return Err(Error::InvalidArgument(format!(
                "latent encoder input size must be a positive multiple of {POOL_GRID}, got {input_size}"
            )));
        }
        let flat = POOL_GRID * POOL_GRID * 3;
        let mut rng = seeds::stream_rng(weights_seed, seeds::stream::DIFFUSION_ENCODER);
        let scale = 1.0 / (flat as f64).sqrt();
        let w = Array2::from_shape_fn((LATENT_DIM, flat), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Ok(Self {
            input_size,
            pool: input_size / POOL_GRID,
            w,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    fn pooled(&self, rgb: &[[f64; 3]]) -> Result<Array1<f64>> {
        let n = self.input_size * self.input_size;
        if rgb.len() != n {
            return Err(Error::ShapeMismatch {
                context: "latent encoder input",
                expected: format!("{n} pixels"),
                got: format!("{} pixels", rgb.len()),
            });
        }
        if rgb.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent encoder input"));
        }
        let area = (self.pool * self.pool) as f64;
        let mut out = Array1::<f64>::zeros(POOL_GRID * POOL_GRID * 3);
        for (p, px) in rgb.iter().enumerate() {
            let (y, x) = (p / self.input_size, p % self.input_size);
            let cell = (y / self.pool) * POOL_GRID + x / self.pool;
            for c in 0..3 {
                out[cell * 3 + c] += px[c] / area;
            }
        }
        Ok(out)
    }

    /// `z = W . pool(x)`.
    pub fn encode(&self, rgb: &[[f64; 3]]) -> Result<Array1<f64>> {
        Ok(self.w.dot(&self.pooled(rgb)?))
    }

    /// Exact adjoint of `encode`: pulls a latent gradient back to the image.
    /// The map is linear, so no forward cache is needed.
    pub fn input_gradient(&self, d_z: &Array1<f64>) -> Vec<[f64; 3]> {
        assert_eq!(d_z.len(), LATENT_DIM, "latent gradient width");
        let d_pooled = self.w.t().dot(d_z);
        let area = (self.pool * self.pool) as f64;
        let mut d_rgb = vec![[0.0; 3]; self.input_size * self.input_size];
        for (p, d) in d_rgb.iter_mut().enumerate() {
            let (y, x) = (p / self.input_size, p % self.input_size);
            let cell = (y / self.pool) * POOL_GRID + x / self.pool;
            for c in 0..3 {
                d[c] = d_pooled[cell * 3 + c] / area;
            }
        }
        d_rgb
    }
}

/// Signal fraction surviving at time `t` of the cosine schedule:
/// `cos^2(pi t / 2)`, running from 1 at t = 0 to 0 at t = 1.
pub fn alpha_bar(t: f64) -> f64 {
    assert!(
        (0.0..=1.0).contains(&t),
        "diffusion time must lie in [0, 1], got {t}"
    );
    let c = (std::f64::consts::FRAC_PI_2 * t).cos();
    c * c
}

/// Distillation weight at time `t`: the noise fraction `1 - alpha_bar(t)`.
pub fn sds_weight(t: f64) -> f64 {
    1.0 - alpha_bar(t)
}

/// Uniform timestep range for distillation, clipped away from both
/// endpoints where the weight vanishes or the signal disappears entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self {
            t_min: 0.02,
            t_max: 0.98,
        }
    }
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min.is_finite() && self.t_max.is_finite())
            || self.t_min < 0.0
            || self.t_max > 1.0
            || self.t_min >= self.t_max
        {
            return Err(Error::InvalidArgument(format!(
                "timestep range must satisfy 0 <= t_min < t_max <= 1, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn sample_timestep<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.t_min..self.t_max)
    }
}

/// Forward noising: `z_t = sqrt(alpha_bar) z + sqrt(1 - alpha_bar) eps`.
pub fn noise_latent(z: &Array1<f64>, t: f64, eps: &Array1<f64>) -> Result<Array1<f64>> {
    if z.len() != eps.len() {
        return Err(Error::ShapeMismatch {
            context: "noise_latent",
            expected: format!("{} noise entries", z.len()),
            got: format!("{}", eps.len()),
        });
    }
    let ab = alpha_bar(t);
    Ok(z * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// A prompt's target distribution in latent space: `N(mu, spread^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTarget {
    pub mu: Array1<f64>,
    pub spread: f64,
}

impl PromptTarget {
    pub fn new(mu: Array1<f64>, spread: f64) -> Result<Self> {
        if mu.len() != LATENT_DIM {
            return Err(Error::ShapeMismatch {
                context: "prompt target mean",
                expected: format!("{LATENT_DIM} entries"),
                got: format!("{}", mu.len()),
            });
        }
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("prompt target mean"));
        }
        if !spread.is_finite() || spread <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "prompt spread must be finite and positive, got {spread}"
            )));
        }
        Ok(Self { mu, spread })
    }

    /// Minimum-MSE noise prediction for a latent noised from this target:
    /// `eps_hat = sqrt(1 - ab) (z_t - sqrt(ab) mu) / (ab spread^2 + 1 - ab)`.
    pub fn denoise(&self, z_t: &Array1<f64>, t: f64) -> Result<Array1<f64>> {
        if z_t.len() != LATENT_DIM {
            return Err(Error::ShapeMismatch {
                context: "denoise input",
                expected: format!("{LATENT_DIM} entries"),
                got: format!("{}", z_t.len()),
            });
        }
        let ab = alpha_bar(t);
        let denom = ab * self.spread * self.spread + (1.0 - ab);
        Ok((z_t - &(&self.mu * ab.sqrt())) * ((1.0 - ab).sqrt() / denom))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBankEntryFile {
    image: String,
    spread: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBankFile {
    prompts: BTreeMap<String, PromptBankEntryFile>,
}

/// Named prompt targets. A "prompt" here is a key into a fixed table, each
/// entry built by encoding an exemplar image — the stand-in for a text
/// encoder.
#[derive(Debug, Clone, Default)]
pub struct PromptBank {
    targets: BTreeMap<String, PromptTarget>,
}

impl PromptBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: impl Into<String>, target: PromptTarget) {
        self.targets.insert(prompt.into(), target);
    }

    /// Build an entry from an exemplar image: `mu = encode(image)`.
    pub fn insert_exemplar(
        &mut self,
        prompt: impl Into<String>,
        rgb: &[[f64; 3]],
        spread: f64,
        encoder: &LatentImageEncoder,
    ) -> Result<()> {
        let target = PromptTarget::new(encoder.encode(rgb)?, spread)?;
        self.insert(prompt, target);
        Ok(())
    }

    /// Load a bank file: JSON `{"prompts": {name: {"image": path, "spread": s}}}`
    /// with image paths resolved relative to the file. Each exemplar PNG must
    /// match the encoder's input size.
    pub fn load(path: &Path, encoder: &LatentImageEncoder) -> Result<Self> {
        let file: PromptBankFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut bank = Self::new();
        for (prompt, entry) in file.prompts {
            let img = image::open(dir.join(&entry.image))?.into_rgb8();
            if img.width() != img.height() || img.width() as usize != encoder.input_size() {
                let want = encoder.input_size();
                return Err(Error::InvalidArgument(format!(
                    "exemplar {:?} is {}x{}, encoder expects {want}x{want}",
                    entry.image,
                    img.width(),
                    img.height(),
                )));
            }
            let rgb: Vec<[f64; 3]> = img
                .pixels()
                .map(|p| [p.0[0], p.0[1], p.0[2]].map(|v| v as f64 / 255.0))
                .collect();
            bank.insert_exemplar(prompt, &rgb, entry.spread, encoder)?;
        }
        Ok(bank)
    }

    pub fn get(&self, prompt: &str) -> Result<&PromptTarget> {
        self.targets
            .get(prompt)
            .ok_or_else(|| Error::UnknownPrompt(prompt.to_string()))
    }

    pub fn prompts(&self) -> impl Iterator<Item = &str> {
        self.targets.keys().map(String::as_str)
    }

    pub fn denoise(&self, prompt: &str, z_t: &Array1<f64>, t: f64) -> Result<Array1<f64>> {
        self.get(prompt)?.denoise(z_t, t)
    }

    /// The full prompt table, e.g. for echoing into a run manifest.
    pub fn targets(&self) -> &BTreeMap<String, PromptTarget> {
        &self.targets
    }

    /// Rebuild a bank from an echoed table, re-validating every target.
    pub fn from_targets(targets: &BTreeMap<String, PromptTarget>) -> Result<Self> {
        let mut bank = Self::new();
        for (prompt, target) in targets {
            bank.insert(prompt, PromptTarget::new(target.mu.clone(), target.spread)?);
        }
        Ok(bank)
    }
}

/// The random draw of one distillation step.
#[derive(Debug, Clone)]
pub struct SdsSample {
    pub t: f64,
    pub eps: Array1<f64>,
}

pub fn draw_sds_sample<R: Rng>(schedule: &DiffusionSchedule, rng: &mut R) -> SdsSample {
    let t = schedule.sample_timestep(rng);
    let eps = Array1::from_shape_fn(LATENT_DIM, |_| StandardNormal.sample(rng));
    SdsSample { t, eps }
}

/// One evaluated distillation step.
#[derive(Debug, Clone)]
pub struct SdsEvaluation {
    /// `||eps_hat - eps||^2` — reported for monitoring; its true gradient is
    /// **not** what `grad_latent` holds.
    pub loss: f64,
    /// `1 - alpha_bar(t)`.
    pub weight: f64,
    /// `eps_hat - eps`.
    pub residual: Array1<f64>,
    /// `weight * (dz/dw)^T residual`, chained through the image encoder and
    /// the renderer but **not** the denoiser: the residual is treated as a
    /// constant when differentiating, which is what makes distillation
    /// mode-seeking rather than noise-matching.
    pub grad_latent: Array2<f64>,
}

/// A distillation step evaluated on an already-rendered image, stopping at
/// the image boundary: `d_rgb` is the pullback of `weight * residual`
/// through the encoder only, ready to feed a renderer backward pass
/// (possibly summed with other per-pixel gradients).
#[derive(Debug, Clone)]
pub struct SdsViewEval {
    pub loss: f64,
    pub weight: f64,
    pub residual: Array1<f64>,
    pub d_rgb: Vec<[f64; 3]>,
}

/// Evaluate the distillation residual and its image-space gradient on a
/// fixed rendered image at a fixed `(t, eps)` draw.
pub fn sds_on_rgb(
    rgb: &[[f64; 3]],
    encoder: &LatentImageEncoder,
    target: &PromptTarget,
    t: f64,
    eps: &Array1<f64>,
) -> Result<SdsViewEval> {
    if eps.len() != LATENT_DIM {
        return Err(Error::ShapeMismatch {
            context: "distillation noise",
            expected: format!("{LATENT_DIM} entries"),
            got: format!("{}", eps.len()),
        });
    }
    let z = encoder.encode(rgb)?;
    let z_t = noise_latent(&z, t, eps)?;
    let eps_hat = target.denoise(&z_t, t)?;
    let residual = &eps_hat - eps;
    let loss = residual.dot(&residual);
    let weight = sds_weight(t);
    let d_rgb = encoder.input_gradient(&(&residual * weight));
    Ok(SdsViewEval {
        loss,
        weight,
        residual,
        d_rgb,
    })
}

/// Distillation step at a fixed timestep and noise draw. Deterministic;
/// `sds_loss` layers the random draw on top.
pub fn sds_at(
    generator: &SceneGenerator,
    w: &LatentCode,
    pose: &CameraPose,
    quality: &RenderQuality,
    encoder: &LatentImageEncoder,
    target: &PromptTarget,
    t: f64,
    eps: &Array1<f64>,
) -> Result<SdsEvaluation> {
    let view = render(generator, w, pose, quality)?;
    let eval = sds_on_rgb(view.rgb(), encoder, target, t, eps)?;
    let d_zero = vec![[0.0; 3]; eval.d_rgb.len()];
    let back = render_backward(generator, w, pose, quality, &eval.d_rgb, &d_zero, &d_zero)?;

    Ok(SdsEvaluation {
        loss: eval.loss,
        weight: eval.weight,
        residual: eval.residual,
        grad_latent: back.d_latent,
    })
}

/// One stochastic distillation step: draws `(t, eps)` from `schedule` and
/// the supplied RNG, then evaluates `sds_at` for `prompt`.
#[allow(clippy::too_many_arguments)]
pub fn sds_loss<R: Rng>(
    generator: &SceneGenerator,
    w: &LatentCode,
    pose: &CameraPose,
    quality: &RenderQuality,
    encoder: &LatentImageEncoder,
    bank: &PromptBank,
    prompt: &str,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<SdsEvaluation> {
    schedule.validate()?;
    let target = bank.get(prompt)?;
    let sample = draw_sds_sample(schedule, rng);
    sds_at(
        generator, w, pose, quality, encoder, target, sample.t, &sample.eps,
    )
}
