//! Lossless raster export of view buffers.
//!
//! The rgb buffer exports directly as 8-bit PNG. Auxiliary buffers are
//! mapped affinely into [0,1] first (normals from [-1,1]); the applied
//! mapping is recorded in a JSON sidecar so the files remain
//! self-describing.

use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::scene::view::RenderedView;

/// `stored = scale * value + offset`, per sidecar entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ValueMapping {
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    rgb: ValueMapping,
    normal: ValueMapping,
    albedo: ValueMapping,
    coverage: ValueMapping,
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The rgb buffer as an 8-bit image.
pub fn view_to_image(view: &RenderedView) -> RgbImage {
    let n = view.size() as u32;
    ImageBuffer::from_fn(n, n, |x, y| {
        let p = view.pixel_index(x as usize, y as usize);
        let [r, g, b] = view.rgb()[p];
        Rgb([quantize(r), quantize(g), quantize(b)])
    })
}

fn buffer_image(view: &RenderedView, map: ValueMapping, f: impl Fn(usize) -> [f64; 3]) -> RgbImage {
    let n = view.size() as u32;
    ImageBuffer::from_fn(n, n, |x, y| {
        let p = view.pixel_index(x as usize, y as usize);
        let v = f(p);
        Rgb([
            quantize(map.scale * v[0] + map.offset),
            quantize(map.scale * v[1] + map.offset),
            quantize(map.scale * v[2] + map.offset),
        ])
    })
}

/// PNG bytes of the rgb buffer; deterministic for identical views.
pub fn encode_rgb_png(view: &RenderedView) -> Result<Vec<u8>> {
    let mut bytes = std::io::Cursor::new(Vec::new());
    view_to_image(view).write_to(&mut bytes, image::ImageFormat::Png)?;
    Ok(bytes.into_inner())
}

/// Write `{stem}.png` plus normal/albedo/coverage companions and the
/// `{stem}_buffers.json` sidecar into `dir`. Returns the written paths.
pub fn export_view(view: &RenderedView, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let identity = ValueMapping {
        scale: 1.0,
        offset: 0.0,
    };
    let signed = ValueMapping {
        scale: 0.5,
        offset: 0.5,
    };

    let mut written = Vec::new();
    let mut save = |name: String, img: &RgbImage| -> Result<()> {
        let path = dir.join(name);
        img.save(&path)?;
        written.push(path);
        Ok(())
    };

    save(format!("{stem}.png"), &view_to_image(view))?;
    save(
        format!("{stem}_normal.png"),
        &buffer_image(view, signed, |p| view.normal()[p]),
    )?;
    save(
        format!("{stem}_albedo.png"),
        &buffer_image(view, identity, |p| view.albedo()[p]),
    )?;
    save(
        format!("{stem}_coverage.png"),
        &buffer_image(view, identity, |p| [view.coverage()[p]; 3]),
    )?;

    let sidecar = Sidecar {
        rgb: identity,
        normal: signed,
        albedo: identity,
        coverage: identity,
    };
    let sidecar_path = dir.join(format!("{stem}_buffers.json"));
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    written.push(sidecar_path);
    Ok(written)
}
