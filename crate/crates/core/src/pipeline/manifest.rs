//! Run manifests: the complete record of one optimization run.
//!
//! A manifest echoes every input that influenced the run (seeds, weights,
//! schedules, iteration counts, the initial latent, the input image, the
//! prompt table) plus the per-iteration loss trace and the final state.
//! Echoing the inputs makes a manifest replayable: rebuilding the pipeline
//! from the echo and re-running reproduces the recorded metrics exactly on
//! the same platform. Wall-clock fields are informational and excluded from
//! the determinism fingerprint.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{DiffusionSchedule, PromptTarget};
use crate::error::Result;
use crate::latent::LatentCode;
use crate::lighting::SHLighting;
use crate::scene::{CameraPose, RenderQuality};

/// The five objective weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    pub lambda_id: f64,
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub lambda_il: f64,
    pub lambda_regu: f64,
}

/// Raw (unweighted) values of the five loss terms. Terms not active in a
/// run stay 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub identity: f64,
    pub reconstruction: f64,
    pub distillation: f64,
    pub illumination: f64,
    pub regularization: f64,
}

impl LossParts {
    /// Each part multiplied by its weight.
    pub fn weighted(&self, w: &LambdaWeights) -> LossParts {
        LossParts {
            identity: w.lambda_id * self.identity,
            reconstruction: w.lambda_r * self.reconstruction,
            distillation: w.lambda_d * self.distillation,
            illumination: w.lambda_il * self.illumination,
            regularization: w.lambda_regu * self.regularization,
        }
    }

    /// The weighted objective value.
    pub fn total(&self, w: &LambdaWeights) -> f64 {
        let p = self.weighted(w);
        p.identity + p.reconstruction + p.distillation + p.illumination + p.regularization
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            (self.identity, "identity"),
            (self.reconstruction, "reconstruction"),
            (self.distillation, "distillation"),
            (self.illumination, "illumination"),
            (self.regularization, "regularization"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, name)| name)
    }
}

/// Which camera a loss term was measured from, recorded per iteration so the
/// view discipline (input-view terms vs. side-view terms) is auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTagRecord {
    /// "input" or "side".
    pub role: String,
    /// Loss terms evaluated from this pose.
    pub terms: Vec<String>,
    pub theta: f64,
    pub phi: f64,
}

/// One optimization step's bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Raw loss values; multiply by `config.weights` for the objective.
    pub parts: LossParts,
    /// Weighted objective value.
    pub total: f64,
    pub pose_tags: Vec<PoseTagRecord>,
    /// Cumulative elapsed milliseconds at the end of this iteration.
    pub wall_clock_ms: u64,
}

/// Deterministic measurements of the final state, taken at the input pose
/// when one exists and the frontal pose otherwise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Feature-space reconstruction loss vs. the input image.
    pub reconstruction: Option<f64>,
    /// Identity loss vs. the input image.
    pub identity: Option<f64>,
    /// PSNR (dB) of the final render vs. the input image.
    pub psnr_db: Option<f64>,
    /// L1 lighting residual vs. the target light.
    pub illumination_l1: Option<f64>,
    /// `||w - mean||_F^2` (unweighted).
    pub regularization: f64,
    /// Encoder distance of the final render to the prompt's target mean.
    pub prompt_distance: Option<f64>,
    /// Same distance measured at the initial latent, for trajectory checks.
    pub prompt_distance_initial: Option<f64>,
}

/// Full configuration echo: everything needed to rebuild and re-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestConfig {
    /// "latent" (stage 1) or "tuning" (stage 2).
    pub stage: String,
    pub weights_seed: u64,
    pub run_seed: u64,
    pub blob_count: usize,
    pub layers: usize,
    pub dim: usize,
    pub image_size: usize,
    pub quality: RenderQuality,
    pub optimizer: String,
    pub adam_betas: (f64, f64),
    pub adam_epsilon: f64,
    pub iters: usize,
    pub step: f64,
    pub weights: LambdaWeights,
    pub prompt: Option<String>,
    pub prompt_targets: BTreeMap<String, PromptTarget>,
    pub schedule: DiffusionSchedule,
    pub theta_range: (f64, f64),
    pub phi_range: (f64, f64),
    pub separate_side_views: bool,
    pub ridge: f64,
    pub stats_samples: usize,
    pub init_mode: String,
    pub init_latent: LatentCode,
    pub input_pose: Option<CameraPose>,
    pub input_image: Option<Vec<[f64; 3]>>,
    pub target_light: Option<SHLighting>,
}

/// The complete record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_kind: String,
    pub config: ManifestConfig,
    pub iterations: Vec<IterationRecord>,
    pub final_latent: LatentCode,
    pub final_metrics: FinalMetrics,
    /// Decoder weight checksums before/after the run: equal in stage 1
    /// (the generator is frozen), differing in stage 2.
    pub generator_checksum_before: u64,
    pub generator_checksum_after: u64,
    /// Latent checksums before/after: differing in stage 1, equal in
    /// stage 2 (the pivot is frozen).
    pub latent_checksum_before: u64,
    pub latent_checksum_after: u64,
    pub wall_clock_ms: u64,
    /// Sibling artifact file names mapped to their sha256 content hashes.
    /// Empty until the run is exported.
    pub artifacts: BTreeMap<String, String>,
    /// The effective command-line configuration (defaults included) echoed
    /// by the CLI layer; absent for library-initiated runs. Excluded from
    /// the fingerprint, like the artifact map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cli_config: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Hash of everything a replay must reproduce: the loss trace, pose
    /// tags, checksums, final latent, and final metrics. Excludes wall
    /// clock, artifacts, and the run-kind label.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let f = |h: &mut Sha256, v: f64| h.update(v.to_bits().to_le_bytes());
        let opt = |h: &mut Sha256, v: Option<f64>| match v {
            Some(x) => {
                h.update([1u8]);
                h.update(x.to_bits().to_le_bytes());
            }
            None => h.update([0u8]),
        };
        for it in &self.iterations {
            h.update((it.iteration as u64).to_le_bytes());
            for part in [
                it.parts.identity,
                it.parts.reconstruction,
                it.parts.distillation,
                it.parts.illumination,
                it.parts.regularization,
                it.total,
            ] {
                f(&mut h, part);
            }
            for tag in &it.pose_tags {
                h.update(tag.role.as_bytes());
                for term in &tag.terms {
                    h.update(term.as_bytes());
                }
                f(&mut h, tag.theta);
                f(&mut h, tag.phi);
            }
        }
        h.update((self.final_latent.layers() as u64).to_le_bytes());
        h.update((self.final_latent.dim() as u64).to_le_bytes());
        for v in self.final_latent.flat() {
            f(&mut h, v);
        }
        let m = &self.final_metrics;
        opt(&mut h, m.reconstruction);
        opt(&mut h, m.identity);
        opt(&mut h, m.psnr_db);
        opt(&mut h, m.illumination_l1);
        f(&mut h, m.regularization);
        opt(&mut h, m.prompt_distance);
        opt(&mut h, m.prompt_distance_initial);
        for c in [
            self.generator_checksum_before,
            self.generator_checksum_after,
            self.latent_checksum_before,
            self.latent_checksum_after,
        ] {
            h.update(c.to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// The loss table: one row per iteration, weighted parts, total, and
    /// cumulative wall-clock milliseconds.
    pub fn loss_table_csv(&self) -> String {
        let mut out = String::from(
            "iteration,identity,reconstruction,distillation,illumination,regularization,total,wall_clock_ms\n",
        );
        for it in &self.iterations {
            let w = it.parts.weighted(&self.config.weights);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                it.iteration,
                w.identity,
                w.reconstruction,
                w.distillation,
                w.illumination,
                w.regularization,
                it.total,
                it.wall_clock_ms
            ));
        }
        out
    }
}

/// Lowercase hex sha256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_parts_and_total() {
        let parts = LossParts {
            identity: 2.0,
            reconstruction: 3.0,
            distillation: 5.0,
            illumination: 7.0,
            regularization: 11.0,
        };
        let w = LambdaWeights {
            lambda_id: 0.5,
            lambda_r: 1.0,
            lambda_d: 0.0,
            lambda_il: 2.0,
            lambda_regu: 0.1,
        };
        let wp = parts.weighted(&w);
        assert_eq!(wp.identity, 1.0);
        assert_eq!(wp.distillation, 0.0);
        assert_eq!(parts.total(&w), 1.0 + 3.0 + 0.0 + 14.0 + 1.1);
    }

    #[test]
    fn non_finite_detection_names_the_term() {
        let mut parts = LossParts::default();
        assert_eq!(parts.first_non_finite(), None);
        parts.illumination = f64::NAN;
        assert_eq!(parts.first_non_finite(), Some("illumination"));
        parts.identity = f64::INFINITY;
        assert_eq!(parts.first_non_finite(), Some("identity"));
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
