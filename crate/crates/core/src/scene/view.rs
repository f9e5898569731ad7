//! Rendered view buffers.

use crate::error::{Error, Result};
use crate::scene::camera::CameraPose;

/// The output of one render: color, world-frame normals, blended albedo, and
/// accumulated opacity, all `image_size x image_size` row-major from the top
/// of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pose: CameraPose,
    rgb: Vec<[f64; 3]>,
    normal: Vec<[f64; 3]>,
    albedo: Vec<[f64; 3]>,
    coverage: Vec<f64>,
}

impl RenderedView {
    /// Assemble a view from raw buffers, checking the buffer invariants:
    /// matching lengths, finite entries, rgb/albedo/coverage in [0,1], and
    /// unit normals wherever coverage exceeds 1e-3.
    pub fn from_buffers(
        pose: CameraPose,
        rgb: Vec<[f64; 3]>,
        normal: Vec<[f64; 3]>,
        albedo: Vec<[f64; 3]>,
        coverage: Vec<f64>,
    ) -> Result<Self> {
        let n = pose.image_size * pose.image_size;
        for (name, len) in [
            ("rgb", rgb.len()),
            ("normal", normal.len()),
            ("albedo", albedo.len()),
            ("coverage", coverage.len()),
        ] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    context: "rendered view buffers",
                    expected: format!("{n} pixels"),
                    got: format!("{len} in {name}"),
                });
            }
        }
        for p in 0..n {
            let unit = |v: [f64; 3]| v.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c));
            if !unit(rgb[p]) {
                return Err(Error::InvalidArgument(format!(
                    "rgb out of [0,1] at pixel {p}: {:?}",
                    rgb[p]
                )));
            }
            if !unit(albedo[p]) {
                return Err(Error::InvalidArgument(format!(
                    "albedo out of [0,1] at pixel {p}: {:?}",
                    albedo[p]
                )));
            }
            if !(coverage[p].is_finite() && (0.0..=1.0).contains(&coverage[p])) {
                return Err(Error::InvalidArgument(format!(
                    "coverage out of [0,1] at pixel {p}: {}",
                    coverage[p]
                )));
            }
            let nv = normal[p];
            if nv.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("normal buffer"));
            }
            if coverage[p] > 1e-3 {
                let norm = (nv[0] * nv[0] + nv[1] * nv[1] + nv[2] * nv[2]).sqrt();
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidArgument(format!(
                        "covered pixel {p} has non-unit normal (norm {norm})"
                    )));
                }
            }
        }
        Ok(Self {
            pose,
            rgb,
            normal,
            albedo,
            coverage,
        })
    }

    pub fn pose(&self) -> &CameraPose {
        &self.pose
    }

    pub fn size(&self) -> usize {
        self.pose.image_size
    }

    pub fn pixel_count(&self) -> usize {
        self.rgb.len()
    }

    pub fn rgb(&self) -> &[[f64; 3]] {
        &self.rgb
    }

    pub fn normal(&self) -> &[[f64; 3]] {
        &self.normal
    }

    pub fn albedo(&self) -> &[[f64; 3]] {
        &self.albedo
    }

    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    /// Row-major index of pixel `(px, py)` with `py` counted from the top.
    pub fn pixel_index(&self, px: usize, py: usize) -> usize {
        py * self.size() + px
    }

    /// Rec. 601 luminance of one pixel.
    pub fn luminance_at(&self, p: usize) -> f64 {
        let [r, g, b] = self.rgb[p];
        0.299 * r + 0.587 * g + 0.114 * b
    }

    /// Mean of all rgb components; handy as a cheap scalar probe in tests.
    pub fn mean_rgb(&self) -> f64 {
        let total: f64 = self.rgb.iter().map(|c| c[0] + c[1] + c[2]).sum();
        total / (3.0 * self.rgb.len() as f64)
    }
}

/// Peak signal-to-noise ratio between two rgb buffers on a [0,1] scale, in
/// decibels. Identical buffers give +inf.
pub fn psnr(a: &RenderedView, b: &RenderedView) -> Result<f64> {
    psnr_rgb(&a.rgb, &b.rgb)
}

/// `psnr` on bare rgb buffers, for images that never came from a render.
pub fn psnr_rgb(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "psnr",
            expected: format!("{} pixels", a.len()),
            got: format!("{} pixels", b.len()),
        });
    }
    let mut sq = 0.0;
    for (ca, cb) in a.iter().zip(b) {
        for k in 0..3 {
            let d = ca[k] - cb[k];
            sq += d * d;
        }
    }
    let mse = sq / (3.0 * a.len() as f64);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}
