//! Latent codes, latent-space statistics, and the quadratic latent
//! regularizer.
//!
//! A code lives either in W (a single row) or in W+ (one row per generator
//! layer). The optimization variable is always a W+ code; W codes exist so a
//! single style row can be broadcast across layers.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which latent space a code belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSpace {
    W,
    #[serde(rename = "W_PLUS")]
    WPlus,
}

/// A point in W or W+ space. Immutable once constructed; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    values: Array2<f64>,
    space: LatentSpace,
}

impl LatentCode {
    /// A W code from a single row.
    pub fn w(row: Array1<f64>) -> Result<Self> {
        let values = row.insert_axis(ndarray::Axis(0));
        Self::new(values, LatentSpace::W)
    }

    /// A W+ code from an `L x D` matrix, `L >= 1`.
    pub fn w_plus(values: Array2<f64>) -> Result<Self> {
        Self::new(values, LatentSpace::WPlus)
    }

    fn new(values: Array2<f64>, space: LatentSpace) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "latent code must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if space == LatentSpace::W && values.nrows() != 1 {
            return Err(Error::ShapeMismatch {
                context: "latent code (W form)",
                expected: "1 row".into(),
                got: format!("{} rows", values.nrows()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code"));
        }
        Ok(Self { values, space })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn space(&self) -> LatentSpace {
        self.space
    }

    /// Number of rows (1 for W, `L` for W+).
    pub fn layers(&self) -> usize {
        self.values.nrows()
    }

    /// Per-row dimension `D`.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Row-major flattened view of all entries.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// Stack `layers` identical copies of a W code into a W+ code.
    pub fn broadcast_to_wplus(&self, layers: usize) -> Result<LatentCode> {
        if self.space != LatentSpace::W {
            return Err(Error::InvalidArgument(
                "broadcast_to_wplus expects a W code".into(),
            ));
        }
        if layers < 1 {
            return Err(Error::InvalidArgument(
                "broadcast_to_wplus needs layers >= 1".into(),
            ));
        }
        let row = self.values.row(0);
        let mut out = Array2::zeros((layers, self.dim()));
        for mut r in out.rows_mut() {
            r.assign(&row);
        }
        LatentCode::w_plus(out)
    }

    /// Serialize to the on-disk JSON document.
    pub fn to_json_string(&self) -> String {
        let doc = LatentCodeFile {
            shape: [self.layers(), self.dim()],
            space: self.space,
            values: self.flat(),
        };
        serde_json::to_string_pretty(&doc).expect("latent code serialization cannot fail")
    }

    /// Parse the on-disk JSON document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: LatentCodeFile = serde_json::from_str(text)?;
        Self::try_from(doc)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct LatentCodeFile {
    shape: [usize; 2],
    space: LatentSpace,
    values: Vec<f64>,
}

impl TryFrom<LatentCodeFile> for LatentCode {
    type Error = Error;

    fn try_from(doc: LatentCodeFile) -> Result<Self> {
        let [layers, dim] = doc.shape;
        if doc.values.len() != layers * dim {
            return Err(Error::ShapeMismatch {
                context: "latent code file",
                expected: format!("{} values", layers * dim),
                got: format!("{} values", doc.values.len()),
            });
        }
        let values = Array2::from_shape_vec((layers, dim), doc.values)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        LatentCode::new(values, doc.space)
    }
}

// (De)serialize through the same document shape used by `save`/`load`, so a
// code embedded in a larger structure and a standalone latent file agree.
impl Serialize for LatentCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        LatentCodeFile {
            shape: [self.layers(), self.dim()],
            space: self.space,
            values: self.flat(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LatentCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = LatentCodeFile::deserialize(deserializer)?;
        LatentCode::try_from(doc).map_err(serde::de::Error::custom)
    }
}

/// Sample mean and per-dimension standard deviation of drawn W+ codes.
#[derive(Debug, Clone)]
pub struct LatentStats {
    pub mean: LatentCode,
    pub per_dim_std: Array2<f64>,
    pub sample_count: usize,
}

/// Elementwise sample mean / standard deviation of `n` draws from `sampler`.
///
/// The sampler receives a ChaCha stream derived from `rng_seed`, so the result
/// is a pure function of `(sampler, n, rng_seed)`.
pub fn estimate_latent_stats<F>(mut sampler: F, n: usize, rng_seed: u64) -> Result<LatentStats>
where
    F: FnMut(&mut ChaCha8Rng) -> LatentCode,
{
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "estimate_latent_stats needs n >= 2, got {n}"
        )));
    }
    let mut rng = crate::seeds::stream_rng(rng_seed, crate::seeds::stream::LATENT_SAMPLER);
    let first = sampler(&mut rng);
    let shape = (first.layers(), first.dim());
    let mut draws = Vec::with_capacity(n);
    draws.push(first.values().clone());
    for _ in 1..n {
        let code = sampler(&mut rng);
        if (code.layers(), code.dim()) != shape {
            return Err(Error::ShapeMismatch {
                context: "latent stats draw",
                expected: format!("{}x{}", shape.0, shape.1),
                got: format!("{}x{}", code.layers(), code.dim()),
            });
        }
        draws.push(code.values().clone());
    }

    let mut mean = Array2::<f64>::zeros(shape);
    for d in &draws {
        mean += d;
    }
    mean /= n as f64;

    let mut var = Array2::<f64>::zeros(shape);
    for d in &draws {
        let diff = d - &mean;
        var += &(&diff * &diff);
    }
    var /= (n - 1) as f64;
    let per_dim_std = var.mapv(f64::sqrt);

    Ok(LatentStats {
        mean: LatentCode::w_plus(mean)?,
        per_dim_std,
        sample_count: n,
    })
}

/// `lambda * ||w - mean||_F^2`.
pub fn regularization_loss(w: &LatentCode, stats: &LatentStats, lambda: f64) -> Result<f64> {
    Ok(regularization_loss_grad(w, stats, lambda)?.0)
}

/// Loss together with its exact gradient `2 * lambda * (w - mean)`.
pub fn regularization_loss_grad(
    w: &LatentCode,
    stats: &LatentStats,
    lambda: f64,
) -> Result<(f64, Array2<f64>)> {
    let mean = stats.mean.values();
    if w.values().dim() != mean.dim() {
        return Err(Error::ShapeMismatch {
            context: "regularization_loss",
            expected: format!("{}x{}", mean.nrows(), mean.ncols()),
            got: format!("{}x{}", w.layers(), w.dim()),
        });
    }
    let diff = w.values() - mean;
    let loss = lambda * diff.iter().map(|d| d * d).sum::<f64>();
    let grad = diff.mapv(|d| 2.0 * lambda * d);
    Ok((loss, grad))
}
