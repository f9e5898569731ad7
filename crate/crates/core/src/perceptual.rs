//! Frozen random convolutional encoders and the reconstruction / identity
//! losses built on them.
//!
//! Two encoders share one architecture: three stride-2 3x3 convolutions
//! (channels 3 -> 8 -> 16 -> 32) with tanh after each, flattened into a
//! bias-free linear head. The feature encoder emits a raw 128-vector; the
//! identity embedder emits a 64-vector normalized to unit length. Weights
//! are drawn once from a seed and never trained — stand-ins for pretrained
//! perception networks, keeping the loss structure (smooth, frozen,
//! discriminative) without any checkpoint. Because every bias is zero, a
//! zero image produces exactly zero features, which the identity embedder
//! reports as an error instead of normalizing.

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeds;

/// Output width of the feature encoder.
pub const FEATURE_DIM: usize = 128;
/// Output width of the identity embedder.
pub const IDENTITY_DIM: usize = 64;

const CHANNELS: [usize; 4] = [3, 8, 16, 32];
const KERNEL: usize = 3;

/// A raw perceptual feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Array1<f64>);

/// A unit-norm identity embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEmbedding(Array1<f64>);

impl IdentityEmbedding {
    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn cosine(&self, other: &IdentityEmbedding) -> f64 {
        self.0.dot(&other.0)
    }
}

struct ConvLayer {
    c_in: usize,
    c_out: usize,
    /// Indexed [((co * c_in + ci) * 3 + ky) * 3 + kx].
    w: Vec<f64>,
}

impl ConvLayer {
    fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.w[((co * self.c_in + ci) * KERNEL + ky) * KERNEL + kx]
    }
}

/// Which head sits on the shared convolutional trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Feature,
    Identity,
}

pub struct ConvEncoder {
    input_size: usize,
    layers: Vec<ConvLayer>,
    /// Row-major (out_dim x flattened trunk output), no bias.
    head: Vec<f64>,
    out_dim: usize,
    kind: Head,
}

/// Stored activations of one forward pass, consumed by the backward pass.
pub struct EncoderCache {
    /// Input plus post-tanh maps of each layer, each flattened [c][y][x].
    maps: Vec<Vec<f64>>,
    /// Raw (pre-normalization) head output.
    raw: Array1<f64>,
}

impl ConvEncoder {
    /// The frozen perceptual feature encoder for `weights_seed`.
    pub fn feature(weights_seed: u64, input_size: usize) -> Result<Self> {
        Self::new(
            weights_seed,
            seeds::stream::FEATURE_ENCODER,
            input_size,
            FEATURE_DIM,
            Head::Feature,
        )
    }

    /// The frozen identity embedder for `weights_seed`; a distinct seed
    /// stream, so its weights never coincide with the feature encoder's.
    pub fn identity(weights_seed: u64, input_size: usize) -> Result<Self> {
        Self::new(
            weights_seed,
            seeds::stream::IDENTITY_ENCODER,
            input_size,
            IDENTITY_DIM,
            Head::Identity,
        )
    }

    fn new(
        weights_seed: u64,
        stream: u64,
        input_size: usize,
        out_dim: usize,
        kind: Head,
    ) -> Result<Self> {
        if input_size == 0 || input_size % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder input size must be a positive multiple of 8, got {input_size}"
            )));
        }
        let mut rng = seeds::stream_rng(weights_seed, stream);
        let mut draw = |fan_in: usize| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (fan_in as f64).sqrt()
        };

        let mut layers = Vec::new();
        for l in 0..3 {
            let (c_in, c_out) = (CHANNELS[l], CHANNELS[l + 1]);
            let fan_in = c_in * KERNEL * KERNEL;
            let w = (0..c_out * c_in * KERNEL * KERNEL)
                .map(|_| draw(fan_in))
                .collect();
            layers.push(ConvLayer { c_in, c_out, w });
        }
        let trunk = CHANNELS[3] * (input_size / 8) * (input_size / 8);
        let head = (0..out_dim * trunk).map(|_| draw(trunk)).collect();

        Ok(Self {
            input_size,
            layers,
            head,
            out_dim,
            kind,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn check_input(&self, rgb: &[[f64; 3]]) -> Result<()> {
        let n = self.input_size * self.input_size;
        if rgb.len() != n {
            return Err(Error::ShapeMismatch {
                context: "encoder input",
                expected: format!("{n} pixels"),
                got: format!("{} pixels", rgb.len()),
            });
        }
        if rgb.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input"));
        }
        Ok(())
    }

    /// Forward pass keeping all intermediate activations.
    pub fn encode_with_cache(&self, rgb: &[[f64; 3]]) -> Result<(Array1<f64>, EncoderCache)> {
        self.check_input(rgb)?;
        let s0 = self.input_size;
        let mut input = vec![0.0; 3 * s0 * s0];
        for (p, px) in rgb.iter().enumerate() {
            for c in 0..3 {
                input[c * s0 * s0 + p] = px[c];
            }
        }

        let mut maps = vec![input];
        let mut size = s0;
        for layer in &self.layers {
            let out_size = size / 2;
            let prev = maps.last().unwrap();
            let mut out = vec![0.0; layer.c_out * out_size * out_size];
            for co in 0..layer.c_out {
                for y in 0..out_size {
                    for x in 0..out_size {
                        let mut acc = 0.0;
                        for ci in 0..layer.c_in {
                            for ky in 0..KERNEL {
                                let iy = (2 * y + ky) as isize - 1;
                                if iy < 0 || iy >= size as isize {
                                    continue;
                                }
                                for kx in 0..KERNEL {
                                    let ix = (2 * x + kx) as isize - 1;
                                    if ix < 0 || ix >= size as isize {
                                        continue;
                                    }
                                    acc += layer.weight(co, ci, ky, kx)
                                        * prev[(ci * size + iy as usize) * size + ix as usize];
                                }
                            }
                        }
                        out[(co * out_size + y) * out_size + x] = acc.tanh();
                    }
                }
            }
            maps.push(out);
            size = out_size;
        }

        let trunk = maps.last().unwrap();
        let mut raw = Array1::<f64>::zeros(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.head[o * trunk.len()..(o + 1) * trunk.len()];
            raw[o] = row.iter().zip(trunk.iter()).map(|(w, v)| w * v).sum();
        }

        let output = match self.kind {
            Head::Feature => raw.clone(),
            Head::Identity => {
                let norm = raw.dot(&raw).sqrt();
                if norm < 1e-12 {
                    return Err(Error::ZeroEmbedding);
                }
                &raw / norm
            }
        };
        Ok((output, EncoderCache { maps, raw }))
    }

    /// Forward pass without the cache.
    pub fn encode(&self, rgb: &[[f64; 3]]) -> Result<Array1<f64>> {
        Ok(self.encode_with_cache(rgb)?.0)
    }

    /// Pull a gradient on the encoder's **final** output (normalized, for
    /// the identity head) back to the input image.
    pub fn input_gradient(&self, cache: &EncoderCache, d_out: &Array1<f64>) -> Vec<[f64; 3]> {
        assert_eq!(d_out.len(), self.out_dim, "upstream gradient width");
        // Through the normalization, if any.
        let d_raw = match self.kind {
            Head::Feature => d_out.clone(),
            Head::Identity => {
                let norm = cache.raw.dot(&cache.raw).sqrt();
                let unit = &cache.raw / norm;
                (d_out - &(&unit * unit.dot(d_out))) / norm
            }
        };

        // Through the head.
        let trunk = cache.maps.last().unwrap();
        let mut d_map = vec![0.0; trunk.len()];
        for o in 0..self.out_dim {
            let row = &self.head[o * trunk.len()..(o + 1) * trunk.len()];
            let g = d_raw[o];
            if g == 0.0 {
                continue;
            }
            for (dm, w) in d_map.iter_mut().zip(row.iter()) {
                *dm += g * w;
            }
        }

        // Through the conv stack, last layer first.
        let mut size = self.input_size / 8;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out_map = &cache.maps[l + 1];
            let in_size = size * 2;
            let mut d_prev = vec![0.0; layer.c_in * in_size * in_size];
            for co in 0..layer.c_out {
                for y in 0..size {
                    for x in 0..size {
                        let idx = (co * size + y) * size + x;
                        let t = out_map[idx];
                        let d_pre = d_map[idx] * (1.0 - t * t);
                        if d_pre == 0.0 {
                            continue;
                        }
                        for ci in 0..layer.c_in {
                            for ky in 0..KERNEL {
                                let iy = (2 * y + ky) as isize - 1;
                                if iy < 0 || iy >= in_size as isize {
                                    continue;
                                }
                                for kx in 0..KERNEL {
                                    let ix = (2 * x + kx) as isize - 1;
                                    if ix < 0 || ix >= in_size as isize {
                                        continue;
                                    }
                                    d_prev[(ci * in_size + iy as usize) * in_size + ix as usize] +=
                                        d_pre * layer.weight(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
            d_map = d_prev;
            size = in_size;
        }

        let s0 = self.input_size;
        let mut d_rgb = vec![[0.0; 3]; s0 * s0];
        for (p, d) in d_rgb.iter_mut().enumerate() {
            for c in 0..3 {
                d[c] = d_map[c * s0 * s0 + p];
            }
        }
        d_rgb
    }
}

/// Both frozen encoders for one seed and render size.
pub struct PerceptualStack {
    feature: ConvEncoder,
    identity: ConvEncoder,
}

impl PerceptualStack {
    pub fn new(weights_seed: u64, input_size: usize) -> Result<Self> {
        Ok(Self {
            feature: ConvEncoder::feature(weights_seed, input_size)?,
            identity: ConvEncoder::identity(weights_seed, input_size)?,
        })
    }

    pub fn feature_encode(&self, rgb: &[[f64; 3]]) -> Result<FeatureVector> {
        Ok(FeatureVector(self.feature.encode(rgb)?))
    }

    pub fn identity_embed(&self, rgb: &[[f64; 3]]) -> Result<IdentityEmbedding> {
        Ok(IdentityEmbedding(self.identity.encode(rgb)?))
    }

    /// `||V(render) - V(input)||^2`.
    pub fn reconstruction_loss(&self, render: &[[f64; 3]], input: &[[f64; 3]]) -> Result<f64> {
        let a = self.feature.encode(render)?;
        let b = self.feature.encode(input)?;
        let d = &a - &b;
        Ok(d.dot(&d))
    }

    /// Reconstruction loss plus its gradient with respect to `render`.
    pub fn reconstruction_loss_grad(
        &self,
        render: &[[f64; 3]],
        input: &[[f64; 3]],
    ) -> Result<(f64, Vec<[f64; 3]>)> {
        let (a, cache) = self.feature.encode_with_cache(render)?;
        let b = self.feature.encode(input)?;
        let d = &a - &b;
        let loss = d.dot(&d);
        let grad = self.feature.input_gradient(&cache, &(&d * 2.0));
        Ok((loss, grad))
    }

    /// `1 - <R(input), R(render)>`, in [0, 2].
    pub fn identity_loss(&self, render: &[[f64; 3]], input: &[[f64; 3]]) -> Result<f64> {
        let a = self.identity.encode(render)?;
        let b = self.identity.encode(input)?;
        Ok(1.0 - a.dot(&b))
    }

    /// Identity loss plus its gradient with respect to `render`.
    pub fn identity_loss_grad(
        &self,
        render: &[[f64; 3]],
        input: &[[f64; 3]],
    ) -> Result<(f64, Vec<[f64; 3]>)> {
        let (a, cache) = self.identity.encode_with_cache(render)?;
        let b = self.identity.encode(input)?;
        let loss = 1.0 - a.dot(&b);
        let grad = self.identity.input_gradient(&cache, &(-b));
        Ok((loss, grad))
    }
}
