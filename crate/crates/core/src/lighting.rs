//! Order-2 real spherical-harmonic lighting: basis evaluation, Lambertian
//! shading, differentiable least-squares lighting estimation from a rendered
//! view, the lighting loss, and SH rotation.
//!
//! Lighting is a single luminance environment described by 9 coefficients in
//! the usual real SH order `(0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1),
//! (2,0), (2,1), (2,2)` with orthonormal normalization over the unit sphere.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::RenderedView;

/// Coordinate frame the coefficients are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Frame {
    World,
    Camera,
}

/// A 9-coefficient order-2 SH lighting environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SHLighting {
    pub frame: Frame,
    pub coeffs: [f64; 9],
}

pub const SH_COEFF_COUNT: usize = 9;

// Orthonormal real SH constants up to l = 2.
const C0: f64 = 0.282_094_791_773_878_1; // 1 / (2 sqrt(pi))
const C1: f64 = 0.488_602_511_902_919_9; // sqrt(3 / (4 pi))
const C2_XY: f64 = 1.092_548_430_592_079_2; // sqrt(15 / (4 pi))
const C2_Z2: f64 = 0.315_391_565_252_520_05; // sqrt(5 / (16 pi))
const C2_X2Y2: f64 = 0.546_274_215_296_039_6; // sqrt(15 / (16 pi)) * ... (x^2 - y^2) band

/// Coefficient vector whose induced shade is exactly 1 everywhere.
const AMBIENT_UNIT: f64 = 3.544_907_701_811_032; // 2 sqrt(pi) = 1 / C0

impl SHLighting {
    pub fn new(frame: Frame, coeffs: [f64; 9]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("lighting coefficients"));
        }
        Ok(Self { frame, coeffs })
    }

    /// Pure ambient light whose shade equals `level` for every normal.
    pub fn ambient(frame: Frame, level: f64) -> Self {
        let mut coeffs = [0.0; 9];
        coeffs[0] = level * AMBIENT_UNIT;
        Self { frame, coeffs }
    }

    /// Unclamped shade `B(n) . coeffs` for a raw direction vector.
    pub fn shade_raw(&self, n: [f64; 3]) -> f64 {
        let b = sh_basis_raw(n);
        (0..9).map(|i| b[i] * self.coeffs[i]).sum()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("lighting serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let lit: SHLighting = serde_json::from_str(text)?;
        Self::new(lit.frame, lit.coeffs)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Real SH basis values at a raw (not necessarily unit) vector. The
/// polynomials are evaluated as written; callers that care about the
/// spherical contract should use [`sh_basis`].
pub fn sh_basis_raw(v: [f64; 3]) -> [f64; 9] {
    let [x, y, z] = v;
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2_XY * x * y,
        C2_XY * y * z,
        C2_Z2 * (3.0 * z * z - 1.0),
        C2_XY * z * x,
        C2_X2Y2 * (x * x - y * y),
    ]
}

/// Real SH basis at a unit direction; rejects inputs whose norm deviates
/// from 1 by more than 1e-5.
pub fn sh_basis(n: &Vector3<f64>) -> Result<[f64; 9]> {
    if (n.norm() - 1.0).abs() > 1e-5 {
        return Err(Error::InvalidArgument(format!(
            "sh_basis expects a unit direction, got norm {}",
            n.norm()
        )));
    }
    Ok(sh_basis_raw([n.x, n.y, n.z]))
}

/// Jacobian of [`sh_basis_raw`]: row `k` is `d b_k / d(x, y, z)`.
pub fn sh_basis_jacobian(v: [f64; 3]) -> [[f64; 3]; 9] {
    let [x, y, z] = v;
    [
        [0.0, 0.0, 0.0],
        [0.0, C1, 0.0],
        [0.0, 0.0, C1],
        [C1, 0.0, 0.0],
        [C2_XY * y, C2_XY * x, 0.0],
        [0.0, C2_XY * z, C2_XY * y],
        [0.0, 0.0, 6.0 * C2_Z2 * z],
        [C2_XY * z, 0.0, C2_XY * x],
        [2.0 * C2_X2Y2 * x, -2.0 * C2_X2Y2 * y, 0.0],
    ]
}

/// Clamped Lambertian shading: `albedo * clamp(B(n) . L, 0, -)`, with the
/// final color clamped to [0,1] per channel.
pub fn lambertian_shade(albedo: [f64; 3], n: &Vector3<f64>, light: &SHLighting) -> Result<[f64; 3]> {
    let b = sh_basis(n)?;
    let shade: f64 = (0..9).map(|i| b[i] * light.coeffs[i]).sum();
    let shade = shade.max(0.0);
    Ok([
        (albedo[0] * shade).clamp(0.0, 1.0),
        (albedo[1] * shade).clamp(0.0, 1.0),
        (albedo[2] * shade).clamp(0.0, 1.0),
    ])
}

/// Pixels participate in the lighting fit when their accumulated opacity
/// exceeds this threshold.
pub const COVERAGE_THRESHOLD: f64 = 0.5;

/// Pixels additionally need this much albedo luminance: shading is read off
/// as color divided by albedo, which is meaningless on near-black surfaces.
pub const ALBEDO_LUM_MIN: f64 = 0.05;

/// Minimum number of participating pixels for a well-posed fit.
pub const MIN_COVERED_PIXELS: usize = 9;

/// Rec. 601 luminance weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// A solved lighting fit together with everything needed to push gradients
/// back into the view buffers.
pub struct LightingFit {
    lighting: SHLighting,
    /// Flat pixel indices of the participating pixels, in buffer order.
    pixels: Vec<usize>,
    /// SH basis row per participating pixel.
    basis_rows: Vec<[f64; 9]>,
    /// Normal per participating pixel (as stored in the buffer).
    normals: Vec<[f64; 3]>,
    /// Albedo luminance per participating pixel.
    albedo_lums: Vec<f64>,
    /// Recovered shade `y_p = lum(rgb_p) / lum(albedo_p)` per pixel.
    shades: Vec<f64>,
    /// Fit residual `y_p - b_p . L` per participating pixel.
    residuals: Vec<f64>,
    /// Cholesky factor of the ridge normal matrix `B^T B + ridge I`.
    chol: Cholesky<f64, nalgebra::Dyn>,
    /// Total pixel count of the source view, for sizing gradient buffers.
    pixel_count: usize,
}

/// Gradients of some scalar loss with respect to the rgb, normal, and albedo
/// buffers of a view, zero outside the participating pixels.
pub struct BufferGrads {
    pub d_rgb: Vec<[f64; 3]>,
    pub d_normal: Vec<[f64; 3]>,
    pub d_albedo: Vec<[f64; 3]>,
}

/// Fit SH lighting to a rendered view by ridge least squares of per-pixel
/// shading on the SH basis of the normal buffer, keeping the factorization
/// for backward passes.
///
/// The shade observation is albedo-normalized luminance,
/// `y_p = lum(rgb_p) / lum(albedo_p)`, which under the renderer's deferred
/// shading equals `B(n_p) . L` exactly wherever the shade was not clamped —
/// regardless of albedo or partial coverage. The fit solves
/// `min_L sum_p (y_p - B(n_p) . L)^2 + ridge ||L||^2` over pixels with
/// coverage above [`COVERAGE_THRESHOLD`] and albedo luminance above
/// [`ALBEDO_LUM_MIN`] via the normal equations, and is differentiable with
/// respect to the rgb, normal, and albedo buffers; see
/// [`LightingFit::buffer_gradients`].
pub fn fit_lighting(view: &RenderedView, ridge: f64) -> Result<LightingFit> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be a nonnegative real, got {ridge}"
        )));
    }
    let coverage = view.coverage();
    let mut pixels = Vec::new();
    let mut albedo_lums = Vec::new();
    for (p, &c) in coverage.iter().enumerate() {
        let a = view.albedo()[p];
        let alum = LUMA[0] * a[0] + LUMA[1] * a[1] + LUMA[2] * a[2];
        if c > COVERAGE_THRESHOLD && alum > ALBEDO_LUM_MIN {
            pixels.push(p);
            albedo_lums.push(alum);
        }
    }
    if pixels.len() < MIN_COVERED_PIXELS {
        return Err(Error::InsufficientCoverage {
            covered: pixels.len(),
            needed: MIN_COVERED_PIXELS,
        });
    }

    let normals: Vec<[f64; 3]> = pixels.iter().map(|&p| view.normal()[p]).collect();
    let basis_rows: Vec<[f64; 9]> = normals.iter().map(|&n| sh_basis_raw(n)).collect();
    let luminance: Vec<f64> = pixels
        .iter()
        .zip(&albedo_lums)
        .map(|(&p, &alum)| view.luminance_at(p) / alum)
        .collect();

    // Normal equations: (B^T B + ridge I) L = B^T y.
    let mut m = DMatrix::<f64>::zeros(9, 9);
    let mut rhs = DVector::<f64>::zeros(9);
    for (row, &y) in basis_rows.iter().zip(&luminance) {
        for i in 0..9 {
            rhs[i] += row[i] * y;
            for j in 0..9 {
                m[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..9 {
        m[(i, i)] += ridge;
    }
    let chol = Cholesky::new(m).ok_or(Error::RankDeficient)?;
    let coeffs_vec = chol.solve(&rhs);
    let mut coeffs = [0.0; 9];
    coeffs.copy_from_slice(coeffs_vec.as_slice());

    let residuals = basis_rows
        .iter()
        .zip(&luminance)
        .map(|(row, &y)| y - (0..9).map(|i| row[i] * coeffs[i]).sum::<f64>())
        .collect();

    Ok(LightingFit {
        lighting: SHLighting::new(Frame::World, coeffs)?,
        pixels,
        basis_rows,
        normals,
        albedo_lums,
        shades: luminance,
        residuals,
        chol,
        pixel_count: coverage.len(),
    })
}

impl LightingFit {
    pub fn lighting(&self) -> &SHLighting {
        &self.lighting
    }

    /// Push a gradient with respect to the fitted coefficients back to the
    /// view buffers.
    ///
    /// With `L = M^-1 B^T y`, `M = B^T B + ridge I`, and upstream gradient
    /// `g`, let `u = M^-1 g`. Then the loss gradient is `B u` with respect to
    /// the shade vector and `(y - B L) u^T - (B u) L^T` with respect to the
    /// basis rows; the latter flows through the basis Jacobian into the
    /// normal buffer, the former through `y = lum(rgb) / lum(albedo)` into
    /// both color buffers.
    pub fn buffer_gradients(&self, upstream: &[f64; 9]) -> BufferGrads {
        let u_vec = self.chol.solve(&DVector::from_column_slice(upstream));
        let mut u = [0.0; 9];
        u.copy_from_slice(u_vec.as_slice());
        let coeffs = self.lighting.coeffs;

        let mut d_rgb = vec![[0.0; 3]; self.pixel_count];
        let mut d_normal = vec![[0.0; 3]; self.pixel_count];
        let mut d_albedo = vec![[0.0; 3]; self.pixel_count];
        for (k, &p) in self.pixels.iter().enumerate() {
            let row = self.basis_rows[k];
            let bu: f64 = (0..9).map(|i| row[i] * u[i]).sum();
            // d loss / d y_p = (B u)_p; y = lum(rgb) / lum(albedo) spreads it
            // over both buffers by the luminance weights.
            let alum = self.albedo_lums[k];
            let y = self.shades[k];
            for c in 0..3 {
                d_rgb[p][c] = bu * LUMA[c] / alum;
                d_albedo[p][c] = -bu * y * LUMA[c] / alum;
            }
            // d loss / d b_p = r_p u - (b_p . u) L, then through d b / d n.
            let jac = sh_basis_jacobian(self.normals[k]);
            let r = self.residuals[k];
            for i in 0..9 {
                let db = r * u[i] - bu * coeffs[i];
                for c in 0..3 {
                    d_normal[p][c] += db * jac[i][c];
                }
            }
        }
        BufferGrads {
            d_rgb,
            d_normal,
            d_albedo,
        }
    }
}

/// Estimated lighting of a view (world frame); see [`fit_lighting`].
pub fn estimate_lighting(view: &RenderedView, ridge: f64) -> Result<SHLighting> {
    Ok(fit_lighting(view, ridge)?.lighting)
}

/// L1 distance between the lighting estimated from `view` and `target`.
pub fn illumination_loss(view: &RenderedView, target: &SHLighting, ridge: f64) -> Result<f64> {
    Ok(illumination_loss_grad(view, target, ridge)?.0)
}

/// The lighting loss together with its gradients with respect to the view's
/// rgb and normal buffers. At coordinates where estimate and target agree
/// exactly the subgradient 0 is used.
pub fn illumination_loss_grad(
    view: &RenderedView,
    target: &SHLighting,
    ridge: f64,
) -> Result<(f64, BufferGrads)> {
    if target.frame != Frame::World {
        return Err(Error::FrameMismatch {
            expected: "WORLD".into(),
            got: format!("{:?}", target.frame),
        });
    }
    let fit = fit_lighting(view, ridge)?;
    let est = fit.lighting().coeffs;
    let mut loss = 0.0;
    let mut g = [0.0; 9];
    for i in 0..9 {
        let d = est[i] - target.coeffs[i];
        loss += d.abs();
        g[i] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    Ok((loss, fit.buffer_gradients(&g)))
}

/// `count` well-spread unit directions on the sphere (golden-angle spiral).
pub fn fibonacci_sphere(count: usize) -> Vec<Vector3<f64>> {
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden_angle * i as f64;
            Vector3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

/// Coefficients of the rotated lighting function `f(d) = B(R^-1 d) . L`.
///
/// Computed by fitting the 9 coefficients to samples of `f` at 200
/// well-spread directions; the fit is exact (up to solver precision) because
/// rotation preserves the order-2 band limit. The `frame` tag is passed
/// through unchanged: relabeling frames is the caller's business.
pub fn sh_rotate(light: &SHLighting, rot: &Matrix3<f64>) -> Result<SHLighting> {
    let gram = rot.transpose() * rot;
    if (gram - Matrix3::identity()).norm() > 1e-6 || (rot.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(
            "sh_rotate expects a proper rotation matrix".into(),
        ));
    }
    let dirs = fibonacci_sphere(200);
    let inv = rot.transpose();
    let mut m = DMatrix::<f64>::zeros(9, 9);
    let mut rhs = DVector::<f64>::zeros(9);
    for d in &dirs {
        let row = sh_basis_raw([d.x, d.y, d.z]);
        let back = inv * d;
        let src = sh_basis_raw([back.x, back.y, back.z]);
        let value: f64 = (0..9).map(|i| src[i] * light.coeffs[i]).sum();
        for i in 0..9 {
            rhs[i] += row[i] * value;
            for j in 0..9 {
                m[(i, j)] += row[i] * row[j];
            }
        }
    }
    let sol = Cholesky::new(m).ok_or(Error::RankDeficient)?.solve(&rhs);
    let mut coeffs = [0.0; 9];
    coeffs.copy_from_slice(sol.as_slice());
    SHLighting::new(light.frame, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::CameraPose;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, UnitSphere};

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        let v: [f64; 3] = UnitSphere.sample(rng);
        Vector3::from(v)
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = nalgebra::Unit::new_normalize(random_unit(rng));
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix()
    }

    #[test]
    fn constant_band_value() {
        let b = sh_basis(&Vector3::new(0.6, 0.8, 0.0)).unwrap();
        assert_relative_eq!(b[0], 0.28209479177387814, epsilon = 1e-15);
    }

    #[test]
    fn band_one_vanishes_off_axis_at_pole() {
        let b = sh_basis(&Vector3::z()).unwrap();
        assert_eq!(b[1], 0.0); // proportional to y
        assert_eq!(b[3], 0.0); // proportional to x
        assert!(b[2] > 0.0);
    }

    #[test]
    fn rejects_non_unit_directions() {
        assert!(sh_basis(&Vector3::new(0.5, 0.0, 0.0)).is_err());
        assert!(sh_basis(&Vector3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn parity_flips_band_one_only() {
        let mut rng = crate::seeds::stream_rng(1, 60);
        for _ in 0..100 {
            let n = random_unit(&mut rng);
            let b = sh_basis(&n).unwrap();
            let bm = sh_basis(&(-n)).unwrap();
            assert_relative_eq!(bm[0], b[0], epsilon = 1e-14);
            for i in 1..4 {
                assert_relative_eq!(bm[i], -b[i], epsilon = 1e-14);
            }
            for i in 4..9 {
                assert_relative_eq!(bm[i], b[i], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn monte_carlo_orthonormality() {
        // (4 pi / N) sum_d b_i(d) b_j(d) -> delta_ij for uniform d.
        let mut rng = crate::seeds::stream_rng(7, 60);
        let n = 1_000_000;
        let mut gram = [[0.0f64; 9]; 9];
        for _ in 0..n {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            let b = sh_basis_raw(d);
            for i in 0..9 {
                for j in i..9 {
                    gram[i][j] += b[i] * b[j];
                }
            }
        }
        let scale = 4.0 * std::f64::consts::PI / n as f64;
        for i in 0..9 {
            for j in i..9 {
                let val = gram[i][j] * scale;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (val - want).abs() < 1e-2,
                    "gram[{i}][{j}] = {val}, want {want}"
                );
            }
        }
    }

    #[test]
    fn basis_jacobian_matches_finite_differences() {
        let mut rng = crate::seeds::stream_rng(2, 60);
        for _ in 0..20 {
            let v = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let jac = sh_basis_jacobian(v);
            let h = 1e-6;
            for c in 0..3 {
                let mut plus = v;
                plus[c] += h;
                let mut minus = v;
                minus[c] -= h;
                let bp = sh_basis_raw(plus);
                let bm = sh_basis_raw(minus);
                for k in 0..9 {
                    let fd = (bp[k] - bm[k]) / (2.0 * h);
                    assert_relative_eq!(jac[k][c], fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn shading_zero_light_is_black() {
        let black = SHLighting::new(Frame::World, [0.0; 9]).unwrap();
        let rgb = lambertian_shade([0.9, 0.5, 0.2], &Vector3::z(), &black).unwrap();
        assert_eq!(rgb, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn ambient_unit_light_reproduces_albedo() {
        let light = SHLighting::ambient(Frame::World, 1.0);
        assert_relative_eq!(light.coeffs[0], 2.0 * std::f64::consts::PI.sqrt(), epsilon = 1e-12);
        let albedo = [0.9, 0.5, 0.2];
        let mut rng = crate::seeds::stream_rng(3, 60);
        for _ in 0..10 {
            let n = random_unit(&mut rng);
            let rgb = lambertian_shade(albedo, &n, &light).unwrap();
            for c in 0..3 {
                assert_relative_eq!(rgb[c], albedo[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn negative_shade_clamps_to_black() {
        let mut coeffs = [0.0; 9];
        coeffs[0] = -5.0;
        let light = SHLighting::new(Frame::World, coeffs).unwrap();
        let rgb = lambertian_shade([1.0, 1.0, 1.0], &Vector3::z(), &light).unwrap();
        assert_eq!(rgb, [0.0, 0.0, 0.0]);
    }

    /// A synthetic view with one Fibonacci-sphere normal per pixel, white
    /// albedo, full coverage, and rgb shaded by `light` (panics if any shade
    /// leaves the linear regime).
    fn shaded_probe_view(size: usize, light: &SHLighting) -> RenderedView {
        let pose = CameraPose::frontal(size);
        let dirs = fibonacci_sphere(size * size);
        let mut rgb = Vec::new();
        let mut normal = Vec::new();
        for d in &dirs {
            let shade = light.shade_raw([d.x, d.y, d.z]);
            assert!(shade > 0.0 && shade < 1.0, "shade {shade} left the linear regime");
            rgb.push([shade, shade, shade]);
            normal.push([d.x, d.y, d.z]);
        }
        let n = size * size;
        RenderedView::from_buffers(pose, rgb, normal, vec![[1.0; 3]; n], vec![1.0; n]).unwrap()
    }

    fn probe_light() -> SHLighting {
        SHLighting::new(
            Frame::World,
            [1.9, 0.12, -0.09, 0.15, 0.05, -0.07, 0.08, 0.06, -0.04],
        )
        .unwrap()
    }

    #[test]
    fn estimation_round_trips_known_lighting() {
        let light = probe_light();
        let view = shaded_probe_view(16, &light);
        let est = estimate_lighting(&view, 1e-8).unwrap();
        for i in 0..9 {
            assert!(
                (est.coeffs[i] - light.coeffs[i]).abs() < 1e-3,
                "coeff {i}: {} vs {}",
                est.coeffs[i],
                light.coeffs[i]
            );
        }
        assert_eq!(est.frame, Frame::World);
    }

    #[test]
    fn estimation_of_unlit_image_is_zero() {
        // white surfaces, zero color: the only consistent light is darkness
        let pose = CameraPose::frontal(8);
        let dirs = fibonacci_sphere(64);
        let normal: Vec<[f64; 3]> = dirs.iter().map(|d| [d.x, d.y, d.z]).collect();
        let view = RenderedView::from_buffers(
            pose,
            vec![[0.0; 3]; 64],
            normal,
            vec![[1.0; 3]; 64],
            vec![1.0; 64],
        )
        .unwrap();
        let est = estimate_lighting(&view, 1e-6).unwrap();
        for c in est.coeffs {
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn black_albedo_pixels_are_excluded_from_the_fit() {
        // all-black surfaces carry no shading information: the fit must
        // refuse rather than divide by (nearly) zero
        let pose = CameraPose::frontal(8);
        let dirs = fibonacci_sphere(64);
        let normal: Vec<[f64; 3]> = dirs.iter().map(|d| [d.x, d.y, d.z]).collect();
        let view = RenderedView::from_buffers(
            pose,
            vec![[0.0; 3]; 64],
            normal,
            vec![[0.0; 3]; 64],
            vec![1.0; 64],
        )
        .unwrap();
        match estimate_lighting(&view, 1e-6) {
            Err(Error::InsufficientCoverage { covered, .. }) => assert_eq!(covered, 0),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn estimation_divides_out_albedo_and_partial_coverage() {
        // the same light seen through varying albedo and coverage must fit
        // identically: shading is read off as lum(rgb) / lum(albedo)
        let light = probe_light();
        let size = 16;
        let pose = CameraPose::frontal(size);
        let dirs = fibonacci_sphere(size * size);
        let mut rgb = Vec::new();
        let mut normal = Vec::new();
        let mut albedo = Vec::new();
        let mut coverage = Vec::new();
        for (i, d) in dirs.iter().enumerate() {
            let shade = light.shade_raw([d.x, d.y, d.z]);
            assert!(shade > 0.0 && shade < 1.0);
            let cov = 0.6 + 0.4 * ((i % 5) as f64 / 4.0);
            let a = [
                cov * (0.3 + 0.05 * ((i % 7) as f64)),
                cov * 0.45,
                cov * (0.8 - 0.04 * ((i % 9) as f64)),
            ];
            rgb.push([a[0] * shade, a[1] * shade, a[2] * shade]);
            normal.push([d.x, d.y, d.z]);
            albedo.push(a);
            coverage.push(cov);
        }
        let view = RenderedView::from_buffers(pose, rgb, normal, albedo, coverage).unwrap();
        let est = estimate_lighting(&view, 1e-8).unwrap();
        for i in 0..9 {
            assert!(
                (est.coeffs[i] - light.coeffs[i]).abs() < 1e-9,
                "coeff {i}: {} vs {}",
                est.coeffs[i],
                light.coeffs[i]
            );
        }
    }

    #[test]
    fn constant_luminance_fits_ambient() {
        let pose = CameraPose::frontal(16);
        let dirs = fibonacci_sphere(256);
        let normal: Vec<[f64; 3]> = dirs.iter().map(|d| [d.x, d.y, d.z]).collect();
        let view = RenderedView::from_buffers(
            pose,
            vec![[1.0; 3]; 256],
            normal,
            vec![[1.0; 3]; 256],
            vec![1.0; 256],
        )
        .unwrap();
        let est = estimate_lighting(&view, 1e-8).unwrap();
        assert_relative_eq!(est.coeffs[0], AMBIENT_UNIT, epsilon = 1e-3);
        for c in &est.coeffs[1..] {
            assert!(c.abs() < 1e-3, "non-ambient coefficient {c}");
        }
    }

    #[test]
    fn estimation_needs_enough_covered_pixels() {
        let pose = CameraPose::frontal(8);
        let mut coverage = vec![0.0; 64];
        for c in coverage.iter_mut().take(8) {
            *c = 1.0;
        }
        let dirs = fibonacci_sphere(64);
        let normal: Vec<[f64; 3]> = dirs.iter().map(|d| [d.x, d.y, d.z]).collect();
        let view = RenderedView::from_buffers(
            pose,
            vec![[0.5; 3]; 64],
            normal,
            vec![[1.0; 3]; 64],
            coverage,
        )
        .unwrap();
        match estimate_lighting(&view, 1e-6) {
            Err(Error::InsufficientCoverage { covered, needed }) => {
                assert_eq!(covered, 8);
                assert_eq!(needed, 9);
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn identical_normals_without_ridge_are_rank_deficient() {
        let pose = CameraPose::frontal(8);
        let view = RenderedView::from_buffers(
            pose,
            vec![[0.5; 3]; 64],
            vec![[0.0, 0.0, 1.0]; 64],
            vec![[1.0; 3]; 64],
            vec![1.0; 64],
        )
        .unwrap();
        assert!(matches!(
            estimate_lighting(&view, 0.0),
            Err(Error::RankDeficient)
        ));
        // a positive ridge restores solvability
        assert!(estimate_lighting(&view, 1e-6).is_ok());
    }

    #[test]
    fn loss_of_self_target_is_zero() {
        let view = shaded_probe_view(16, &probe_light());
        let est = estimate_lighting(&view, 1e-6).unwrap();
        assert_eq!(illumination_loss(&view, &est, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn loss_is_coefficientwise_l1() {
        let view = shaded_probe_view(16, &probe_light());
        let est = estimate_lighting(&view, 1e-6).unwrap();
        let mut shifted = est;
        shifted.coeffs[0] += 0.1;
        let loss = illumination_loss(&view, &shifted, 1e-6).unwrap();
        assert_relative_eq!(loss, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn loss_rejects_camera_frame_targets() {
        let view = shaded_probe_view(16, &probe_light());
        let target = SHLighting::ambient(Frame::Camera, 1.0);
        assert!(matches!(
            illumination_loss(&view, &target, 1e-6),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let light = probe_light();
        // Like shaded_probe_view but with interior albedo 0.8 so the albedo
        // finite-difference probes stay inside the [0,1] buffer contract.
        let view = {
            let size = 8;
            let pose = CameraPose::frontal(size);
            let dirs = fibonacci_sphere(size * size);
            let mut rgb = Vec::new();
            let mut normal = Vec::new();
            for d in &dirs {
                let shade = light.shade_raw([d.x, d.y, d.z]);
                assert!(shade > 0.0 && shade < 1.0);
                rgb.push([0.8 * shade; 3]);
                normal.push([d.x, d.y, d.z]);
            }
            let n = size * size;
            RenderedView::from_buffers(pose, rgb, normal, vec![[0.8; 3]; n], vec![1.0; n])
                .unwrap()
        };
        // Generic target so no coefficient difference sits exactly at zero.
        let mut target = light;
        for (i, c) in target.coeffs.iter_mut().enumerate() {
            *c += 0.01 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let ridge = 1e-6;
        let (_, grads) = illumination_loss_grad(&view, &target, ridge).unwrap();

        let h = 1e-6;
        let mut rng = crate::seeds::stream_rng(8, 60);
        for _ in 0..12 {
            let p = rng.random_range(0..view.pixel_count());
            // rgb channel probe
            let c = rng.random_range(0..3);
            let fd_rgb = {
                let perturb = |delta: f64| {
                    let mut rgb = view.rgb().to_vec();
                    rgb[p][c] = (rgb[p][c] + delta).clamp(0.0, 1.0);
                    let v = RenderedView::from_buffers(
                        *view.pose(),
                        rgb,
                        view.normal().to_vec(),
                        view.albedo().to_vec(),
                        view.coverage().to_vec(),
                    )
                    .unwrap();
                    illumination_loss(&v, &target, ridge).unwrap()
                };
                (perturb(h) - perturb(-h)) / (2.0 * h)
            };
            assert_relative_eq!(grads.d_rgb[p][c], fd_rgb, epsilon = 1e-5, max_relative = 1e-4);

            // normal component probe
            let fd_n = {
                let perturb = |delta: f64| {
                    let mut normal = view.normal().to_vec();
                    normal[p][c] += delta;
                    let v = RenderedView::from_buffers(
                        *view.pose(),
                        view.rgb().to_vec(),
                        normal,
                        view.albedo().to_vec(),
                        view.coverage().to_vec(),
                    )
                    .unwrap();
                    illumination_loss(&v, &target, ridge).unwrap()
                };
                (perturb(h) - perturb(-h)) / (2.0 * h)
            };
            assert_relative_eq!(grads.d_normal[p][c], fd_n, epsilon = 1e-5, max_relative = 1e-4);

            // albedo channel probe
            let fd_a = {
                let perturb = |delta: f64| {
                    let mut albedo = view.albedo().to_vec();
                    albedo[p][c] += delta;
                    let v = RenderedView::from_buffers(
                        *view.pose(),
                        view.rgb().to_vec(),
                        view.normal().to_vec(),
                        albedo,
                        view.coverage().to_vec(),
                    )
                    .unwrap();
                    illumination_loss(&v, &target, ridge).unwrap()
                };
                (perturb(h) - perturb(-h)) / (2.0 * h)
            };
            assert_relative_eq!(grads.d_albedo[p][c], fd_a, epsilon = 1e-5, max_relative = 1e-4);
        }
    }

    #[test]
    fn rotation_by_identity_is_exact() {
        let light = probe_light();
        let rotated = sh_rotate(&light, &Matrix3::identity()).unwrap();
        for i in 0..9 {
            assert_relative_eq!(rotated.coeffs[i], light.coeffs[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn ambient_light_is_rotation_invariant() {
        let light = SHLighting::ambient(Frame::World, 0.8);
        let mut rng = crate::seeds::stream_rng(4, 60);
        for _ in 0..20 {
            let rot = random_rotation(&mut rng);
            let rotated = sh_rotate(&light, &rot).unwrap();
            for i in 0..9 {
                assert_relative_eq!(rotated.coeffs[i], light.coeffs[i], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rotation_preserves_per_band_norms() {
        let light = probe_light();
        let mut rng = crate::seeds::stream_rng(5, 60);
        let band = |c: &[f64; 9], lo: usize, hi: usize| -> f64 {
            c[lo..hi].iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        for _ in 0..100 {
            let rot = random_rotation(&mut rng);
            let rotated = sh_rotate(&light, &rot).unwrap();
            for (lo, hi) in [(0, 1), (1, 4), (4, 9)] {
                assert_relative_eq!(
                    band(&rotated.coeffs, lo, hi),
                    band(&light.coeffs, lo, hi),
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn rotations_compose() {
        let light = probe_light();
        let mut rng = crate::seeds::stream_rng(6, 60);
        for _ in 0..20 {
            let r1 = random_rotation(&mut rng);
            let r2 = random_rotation(&mut rng);
            let seq = sh_rotate(&sh_rotate(&light, &r1).unwrap(), &r2).unwrap();
            let joint = sh_rotate(&light, &(r2 * r1)).unwrap();
            for i in 0..9 {
                assert_relative_eq!(seq.coeffs[i], joint.coeffs[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rotation_rejects_non_rotations() {
        let light = probe_light();
        assert!(sh_rotate(&light, &(Matrix3::identity() * 2.0)).is_err());
        // reflection: orthonormal but det -1
        let mut refl = Matrix3::identity();
        refl[(0, 0)] = -1.0;
        assert!(sh_rotate(&light, &refl).is_err());
    }

    #[test]
    fn rotation_agrees_with_direct_evaluation() {
        // The fitted coefficients must reproduce f(d) = B(R^-1 d) . L.
        let light = probe_light();
        let mut rng = crate::seeds::stream_rng(9, 60);
        let rot = random_rotation(&mut rng);
        let rotated = sh_rotate(&light, &rot).unwrap();
        for _ in 0..50 {
            let d = random_unit(&mut rng);
            let back = rot.transpose() * d;
            let expect = light.shade_raw([back.x, back.y, back.z]);
            let got = rotated.shade_raw([d.x, d.y, d.z]);
            assert_relative_eq!(got, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn lighting_file_round_trips() {
        let light = probe_light();
        let text = light.to_json_string();
        assert!(text.contains("\"WORLD\""));
        let back = SHLighting::from_json_str(&text).unwrap();
        assert_eq!(back, light);
        // unknown fields are rejected
        assert!(SHLighting::from_json_str(
            "{\"frame\":\"WORLD\",\"coeffs\":[0,0,0,0,0,0,0,0,0],\"extra\":1}"
        )
        .is_err());
        // wrong arity is rejected
        assert!(SHLighting::from_json_str("{\"frame\":\"WORLD\",\"coeffs\":[1,2,3]}").is_err());
    }
}
