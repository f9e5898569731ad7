//! The frozen affine decoder from W+ codes to scene parameters.
//!
//! `SceneGenerator` plays the role of a trained generator backbone: a single
//! seeded affine map from the flattened latent to pre-activations, squashed
//! into valid parameter ranges. Two structural properties are built into the
//! weight matrix rather than enforced at run time:
//!
//! * the first 9 entries of the **last** latent row (the "lighting slice")
//!   are the only inputs to the 9 lighting coefficients, and
//! * every blob parameter has zero weight on that slice,
//!
//! so lighting is steerable through the latent without touching geometry,
//! and vice versa. All weights are drawn once from `weights_seed` and are
//! immutable afterwards except through [`SceneGenerator::apply_delta`], the
//! entry point for the fine-tuning stage.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::latent::{LatentCode, LatentSpace};
use crate::lighting::{Frame, SHLighting};
use crate::scene::params::{Blob, SceneParamGrads, ToySceneParams};
use crate::seeds;

/// Pre-activation rows per blob: [cx, cy, cz, scale, density, ar, ag, ab].
const ROWS_PER_BLOB: usize = 8;
/// Width of the lighting slice and of the lighting row block.
const LIGHT_ROWS: usize = 9;

/// Weight scale of the lighting block: keeps decoded band-1/2 coefficients
/// small relative to the ambient bias so typical shades stay positive.
const LIGHT_WEIGHT_SCALE: f64 = 0.05;
/// Ambient bias of the first lighting coefficient; shade offset of
/// 2.0 / (2 sqrt(pi)) ~ 0.56 for every normal.
const LIGHT_AMBIENT_BIAS: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct SceneGenerator {
    blob_count: usize,
    layers: usize,
    dim: usize,
    /// (8 K + 9) x (layers * dim), with the structural zeros described in
    /// the module docs.
    weights: Array2<f64>,
    biases: Array1<f64>,
}

/// Gradients flowing out of a decode: with respect to the latent (for
/// latent-space optimization) and with respect to the decoder's own affine
/// parameters (for the fine-tuning stage). `d_weights` is zero wherever the
/// weight matrix is structurally zero, so tuning preserves the slice
/// separation.
#[derive(Debug, Clone)]
pub struct DecodeBackward {
    pub d_latent: Array2<f64>,
    pub d_weights: Array2<f64>,
    pub d_biases: Array1<f64>,
}

impl SceneGenerator {
    /// Default toy dimensions: 8 blobs, 4 latent rows of width 64.
    pub fn with_defaults(weights_seed: u64) -> Self {
        Self::new(8, 4, 64, weights_seed).expect("default dimensions are valid")
    }

    pub fn new(blob_count: usize, layers: usize, dim: usize, weights_seed: u64) -> Result<Self> {
        if blob_count == 0 {
            return Err(Error::InvalidArgument("blob_count must be >= 1".into()));
        }
        if layers == 0 {
            return Err(Error::InvalidArgument("layers must be >= 1".into()));
        }
        if dim < LIGHT_ROWS {
            return Err(Error::InvalidArgument(format!(
                "latent dim must be >= {LIGHT_ROWS} to host the lighting slice, got {dim}"
            )));
        }
        let rows = ROWS_PER_BLOB * blob_count + LIGHT_ROWS;
        let cols = layers * dim;
        let slice = (layers - 1) * dim..(layers - 1) * dim + LIGHT_ROWS;

        let mut rng = seeds::stream_rng(weights_seed, seeds::stream::GENERATOR_WEIGHTS);
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

        // Blob rows: unit-ish pre-activation scale over the non-slice
        // columns. Lighting rows: small weights on the slice only.
        let mut weights = Array2::<f64>::zeros((rows, cols));
        let blob_fan_in = (cols - LIGHT_ROWS) as f64;
        let blob_std = blob_fan_in.sqrt().recip();
        for r in 0..ROWS_PER_BLOB * blob_count {
            for c in 0..cols {
                if !slice.contains(&c) {
                    weights[[r, c]] = blob_std * normal(&mut rng);
                }
            }
        }
        for r in 0..LIGHT_ROWS {
            for c in slice.clone() {
                weights[[ROWS_PER_BLOB * blob_count + r, c]] = LIGHT_WEIGHT_SCALE * normal(&mut rng);
            }
        }

        let mut biases = Array1::<f64>::zeros(rows);
        for k in 0..blob_count {
            let base = ROWS_PER_BLOB * k;
            for i in 0..3 {
                // spread the blobs out at the latent mean
                biases[base + i] = 0.6 * normal(&mut rng);
            }
            // softplus(-1.2 +- 0.2) ~ 0.21..0.38 -> scales ~ 0.3
            biases[base + 3] = -1.2 + 0.2 * normal(&mut rng);
            // softplus(0.3 +- 0.3) ~ 0.7..1.1 -> densities ~ 1
            biases[base + 4] = 0.3 + 0.3 * normal(&mut rng);
            for i in 5..8 {
                biases[base + i] = 0.8 * normal(&mut rng);
            }
        }
        biases[ROWS_PER_BLOB * blob_count] = LIGHT_AMBIENT_BIAS;

        Ok(Self {
            blob_count,
            layers,
            dim,
            weights,
            biases,
        })
    }

    pub fn blob_count(&self) -> usize {
        self.blob_count
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_rows(&self) -> usize {
        ROWS_PER_BLOB * self.blob_count + LIGHT_ROWS
    }

    /// Flat-index range of the lighting slice within a flattened code.
    pub fn lighting_slice(&self) -> std::ops::Range<usize> {
        (self.layers - 1) * self.dim..(self.layers - 1) * self.dim + LIGHT_ROWS
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    /// A W+ draw from the latent prior: one standard-normal row broadcast to
    /// all layers, standing in for a mapping network.
    pub fn sample_latent<R: Rng>(&self, rng: &mut R) -> LatentCode {
        let row = Array1::from_shape_fn(self.dim, |_| StandardNormal.sample(rng));
        LatentCode::w(row)
            .expect("finite row")
            .broadcast_to_wplus(self.layers)
            .expect("layers >= 1")
    }

    fn check_code(&self, w: &LatentCode) -> Result<()> {
        if w.space() != LatentSpace::WPlus {
            return Err(Error::InvalidArgument(
                "decode expects a W+ code; broadcast W codes first".into(),
            ));
        }
        if w.layers() != self.layers || w.dim() != self.dim {
            return Err(Error::ShapeMismatch {
                context: "decode latent",
                expected: format!("{}x{}", self.layers, self.dim),
                got: format!("{}x{}", w.layers(), w.dim()),
            });
        }
        Ok(())
    }

    fn pre_activations(&self, w: &LatentCode) -> Array1<f64> {
        let x = Array1::from_vec(w.flat());
        self.weights.dot(&x) + &self.biases
    }

    /// Decode a W+ code into scene parameters. See the module docs for the
    /// activation map; deterministic and differentiable everywhere.
    pub fn decode(&self, w: &LatentCode) -> Result<ToySceneParams> {
        self.check_code(w)?;
        let u = self.pre_activations(w);
        let mut blobs = Vec::with_capacity(self.blob_count);
        for k in 0..self.blob_count {
            let base = ROWS_PER_BLOB * k;
            blobs.push(Blob {
                center: nalgebra::Vector3::new(
                    0.8 * u[base].tanh(),
                    0.8 * u[base + 1].tanh(),
                    0.8 * u[base + 2].tanh(),
                ),
                scale: 0.05 + softplus(u[base + 3]),
                density: 0.1 + softplus(u[base + 4]),
                albedo: [
                    sigmoid(u[base + 5]),
                    sigmoid(u[base + 6]),
                    sigmoid(u[base + 7]),
                ],
            });
        }
        let mut coeffs = [0.0; 9];
        for i in 0..LIGHT_ROWS {
            coeffs[i] = u[ROWS_PER_BLOB * self.blob_count + i];
        }
        ToySceneParams::new(blobs, SHLighting::new(Frame::World, coeffs)?)
    }

    /// Pull a gradient with respect to the decoded parameters back through
    /// the activations and the affine map.
    pub fn decode_backward(
        &self,
        w: &LatentCode,
        d_params: &SceneParamGrads,
    ) -> Result<DecodeBackward> {
        self.check_code(w)?;
        if d_params.blob_count() != self.blob_count {
            return Err(Error::ShapeMismatch {
                context: "decode_backward gradients",
                expected: format!("{} blobs", self.blob_count),
                got: format!("{} blobs", d_params.blob_count()),
            });
        }
        let u = self.pre_activations(w);
        let d_p = Array1::from_vec(d_params.to_flat());

        // d loss / d u = d loss / d p * activation'(u), row by row.
        let mut d_u = Array1::<f64>::zeros(self.param_rows());
        for k in 0..self.blob_count {
            let base = ROWS_PER_BLOB * k;
            for i in 0..3 {
                let t = u[base + i].tanh();
                d_u[base + i] = d_p[base + i] * 0.8 * (1.0 - t * t);
            }
            d_u[base + 3] = d_p[base + 3] * sigmoid(u[base + 3]);
            d_u[base + 4] = d_p[base + 4] * sigmoid(u[base + 4]);
            for i in 5..8 {
                let s = sigmoid(u[base + i]);
                d_u[base + i] = d_p[base + i] * s * (1.0 - s);
            }
        }
        for i in 0..LIGHT_ROWS {
            let r = ROWS_PER_BLOB * self.blob_count + i;
            d_u[r] = d_p[r];
        }

        let x = Array1::from_vec(w.flat());
        let d_x = self.weights.t().dot(&d_u);
        let d_latent = d_x
            .into_shape_with_order((self.layers, self.dim))
            .expect("flat length matches code shape");

        // d loss / d W = d_u (x) x, masked to the structural sparsity so a
        // tuned generator keeps the slice separation.
        let slice = self.lighting_slice();
        let cols = self.layers * self.dim;
        let mut d_weights = Array2::<f64>::zeros((self.param_rows(), cols));
        for r in 0..ROWS_PER_BLOB * self.blob_count {
            if d_u[r] == 0.0 {
                continue;
            }
            for c in 0..cols {
                if !slice.contains(&c) {
                    d_weights[[r, c]] = d_u[r] * x[c];
                }
            }
        }
        for r in ROWS_PER_BLOB * self.blob_count..self.param_rows() {
            for c in slice.clone() {
                d_weights[[r, c]] = d_u[r] * x[c];
            }
        }

        Ok(DecodeBackward {
            d_latent,
            d_weights,
            d_biases: d_u,
        })
    }

    /// Add an update to the affine parameters (the fine-tuning stage's
    /// descent step). Entries of `delta_w` on structurally zero positions
    /// are ignored, preserving the slice separation.
    pub fn apply_delta(&mut self, delta_w: &Array2<f64>, delta_b: &Array1<f64>) -> Result<()> {
        if delta_w.dim() != self.weights.dim() || delta_b.len() != self.biases.len() {
            return Err(Error::ShapeMismatch {
                context: "generator delta",
                expected: format!("{:?} weights", self.weights.dim()),
                got: format!("{:?} weights", delta_w.dim()),
            });
        }
        if delta_w.iter().chain(delta_b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator delta"));
        }
        let slice = self.lighting_slice();
        let blob_rows = ROWS_PER_BLOB * self.blob_count;
        for ((r, c), v) in delta_w.indexed_iter() {
            let allowed = if r < blob_rows {
                !slice.contains(&c)
            } else {
                slice.contains(&c)
            };
            if allowed {
                self.weights[[r, c]] += v;
            }
        }
        self.biases += delta_b;
        Ok(())
    }

    /// A stable digest of the affine parameters, used to assert that a stage
    /// did or did not touch the generator.
    pub fn weight_checksum(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in self.weights.iter().chain(self.biases.iter()) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}
