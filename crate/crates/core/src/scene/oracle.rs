//! A second, independently written renderer used to cross-check
//! [`crate::scene::render`].
//!
//! Same physics, different code: transmittance comes from accumulated
//! optical depth (`exp(-dt * sum sigma)`) instead of a running product of
//! `(1 - alpha)`, densities are gathered in a separate pass before
//! compositing, and the deferred per-pixel shading goes through
//! [`SHLighting::shade_raw`] on the composited normal rather than an inlined
//! basis loop. Agreement between the two renderers is a meaningful check
//! precisely because nothing but the scene types and the SH basis is shared.
//! Test-only by intent, but exported so integration tests and benches can
//! reach it.

use nalgebra::Vector3;

use crate::error::Result;
use crate::scene::camera::CameraPose;
use crate::scene::params::ToySceneParams;
use crate::scene::render::RenderQuality;
use crate::scene::view::RenderedView;

/// Density, density gradient, and albedo-weighted density sums at a point.
fn field_at(params: &ToySceneParams, p: &Vector3<f64>) -> (f64, Vector3<f64>, [f64; 3]) {
    let mut sigma = 0.0;
    let mut grad = Vector3::zeros();
    let mut weighted_albedo = [0.0; 3];
    for blob in &params.blobs {
        let offset = *p - blob.center;
        let exponent = -offset.norm_squared() / (2.0 * blob.scale * blob.scale);
        let density_here = blob.density * exponent.exp();
        sigma += density_here;
        // gradient of the Gaussian pulls toward the center
        grad -= offset * (density_here / (blob.scale * blob.scale));
        for c in 0..3 {
            weighted_albedo[c] += density_here * blob.albedo[c];
        }
    }
    (sigma, grad, weighted_albedo)
}

/// Render with default near/far bounds; see [`render_oracle_with`].
pub fn render_oracle(
    params: &ToySceneParams,
    pose: &CameraPose,
    samples_per_ray: usize,
) -> Result<RenderedView> {
    render_oracle_with(
        params,
        pose,
        &RenderQuality {
            samples_per_ray,
            ..RenderQuality::default()
        },
    )
}

/// Reference render of a decoded scene via optical-depth transmittance.
pub fn render_oracle_with(
    params: &ToySceneParams,
    pose: &CameraPose,
    q: &RenderQuality,
) -> Result<RenderedView> {
    if q.samples_per_ray < 2 {
        return Err(crate::error::Error::InvalidArgument(
            "oracle needs samples_per_ray >= 2".into(),
        ));
    }
    if q.near >= q.far {
        return Err(crate::error::Error::InvalidArgument(
            "oracle needs near < far".into(),
        ));
    }
    let n = pose.image_size;
    let dt = (q.far - q.near) / q.samples_per_ray as f64;

    let mut rgb = Vec::with_capacity(n * n);
    let mut normal = Vec::with_capacity(n * n);
    let mut albedo = Vec::with_capacity(n * n);
    let mut coverage = Vec::with_capacity(n * n);

    for py in 0..n {
        for px in 0..n {
            let ray = pose.ray(px, py);

            // Pass 1: gather the field along the ray.
            let mut sigmas = Vec::with_capacity(q.samples_per_ray);
            let mut blends = Vec::with_capacity(q.samples_per_ray);
            let mut normals = Vec::with_capacity(q.samples_per_ray);
            for i in 0..q.samples_per_ray {
                let t = q.near + (i as f64 + 0.5) * dt;
                let p = ray.origin + ray.dir * t;
                let (sigma, grad, weighted_albedo) = field_at(params, &p);
                let blend = if sigma > 1e-12 {
                    [
                        weighted_albedo[0] / sigma,
                        weighted_albedo[1] / sigma,
                        weighted_albedo[2] / sigma,
                    ]
                } else {
                    [0.0; 3]
                };
                let nrm = if grad.norm() > 1e-12 {
                    (-grad).normalize()
                } else {
                    Vector3::zeros()
                };
                sigmas.push(sigma);
                blends.push(blend);
                normals.push(nrm);
            }

            // Pass 2: composite with optical-depth transmittance.
            let mut depth_before = 0.0f64;
            let mut pix_albedo = [0.0f64; 3];
            let mut pix_normal = Vector3::zeros();
            let mut pix_cov = 0.0f64;
            for i in 0..q.samples_per_ray {
                let transmittance = (-depth_before).exp();
                let absorb = 1.0 - (-sigmas[i] * dt).exp();
                let weight = transmittance * absorb;
                for c in 0..3 {
                    pix_albedo[c] += weight * blends[i][c];
                }
                pix_normal += normals[i] * weight;
                pix_cov += weight;
                depth_before += sigmas[i] * dt;
            }

            // Pass 3: shade the finished pixel once.
            let out_normal = if pix_cov > 1e-3 {
                if pix_normal.norm() > 1e-12 {
                    let u = pix_normal.normalize();
                    [u.x, u.y, u.z]
                } else {
                    [0.0, 0.0, 1.0]
                }
            } else {
                [0.0; 3]
            };
            let out_albedo = [
                pix_albedo[0].clamp(0.0, 1.0),
                pix_albedo[1].clamp(0.0, 1.0),
                pix_albedo[2].clamp(0.0, 1.0),
            ];
            let shade = params.lighting.shade_raw(out_normal).clamp(0.0, 1.0);

            rgb.push([
                out_albedo[0] * shade,
                out_albedo[1] * shade,
                out_albedo[2] * shade,
            ]);
            albedo.push(out_albedo);
            coverage.push(pix_cov.clamp(0.0, 1.0));
            normal.push(out_normal);
        }
    }
    RenderedView::from_buffers(*pose, rgb, normal, albedo, coverage)
}
