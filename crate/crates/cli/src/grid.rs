//! Multi-view image grids: one latent rendered from several poses, tiled
//! horizontally into a single deterministic PNG.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use sculpt_core::scene::{render, CameraPose, RenderQuality, SceneGenerator};
use sculpt_core::{Error, LatentCode, Result};

/// Evenly spaced grid poses: polar angle fixed at the frontal value, the
/// azimuth spanning `phi_range` inclusively (its midpoint when `n == 1`).
pub fn default_grid_poses(image_size: usize, phi_range: (f64, f64), n: usize) -> Result<Vec<CameraPose>> {
    if n == 0 {
        return Err(Error::InvalidArgument("a grid needs at least one pose".into()));
    }
    let base = CameraPose::frontal(image_size);
    let (lo, hi) = phi_range;
    (0..n)
        .map(|i| {
            let phi = if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            };
            CameraPose::new(base.theta, phi, base.radius, base.fov_y, image_size)
        })
        .collect()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Render `w` from every pose and tile the views left to right. The output
/// is `poses.len() * image_size` pixels wide and `image_size` tall.
pub fn grid_image(
    generator: &SceneGenerator,
    w: &LatentCode,
    poses: &[CameraPose],
    quality: &RenderQuality,
) -> Result<RgbImage> {
    if poses.is_empty() {
        return Err(Error::InvalidArgument("a grid needs at least one pose".into()));
    }
    let size = poses[0].image_size;
    if poses.iter().any(|p| p.image_size != size) {
        return Err(Error::InvalidArgument(
            "all grid poses must share one image size".into(),
        ));
    }
    let views = poses
        .iter()
        .map(|pose| render(generator, w, pose, quality))
        .collect::<Result<Vec<_>>>()?;
    let n = size as u32;
    Ok(ImageBuffer::from_fn(n * poses.len() as u32, n, |x, y| {
        let view = &views[(x / n) as usize];
        let p = view.pixel_index((x % n) as usize, y as usize);
        let [r, g, b] = view.rgb()[p];
        Rgb([quantize(r), quantize(g), quantize(b)])
    }))
}

/// Deterministic PNG bytes of the tiled grid.
pub fn encode_view_grid(
    generator: &SceneGenerator,
    w: &LatentCode,
    poses: &[CameraPose],
    quality: &RenderQuality,
) -> Result<Vec<u8>> {
    let img = grid_image(generator, w, poses, quality)?;
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)?;
    Ok(bytes.into_inner())
}

/// Write the tiled grid to `path`. Re-exporting the same inputs writes a
/// byte-identical file.
pub fn export_view_grid(
    generator: &SceneGenerator,
    w: &LatentCode,
    poses: &[CameraPose],
    quality: &RenderQuality,
    path: &Path,
) -> Result<()> {
    let bytes = encode_view_grid(generator, w, poses, quality)?;
    std::fs::write(path, bytes)?;
    Ok(())
}
