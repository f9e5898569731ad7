//! Decoded scene parameters and their gradient accumulator.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::lighting::SHLighting;

/// One isotropic Gaussian density blob with a flat albedo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// Center, confined to [-0.8, 0.8]^3 by the decoder's tanh range.
    pub center: Vector3<f64>,
    /// Gaussian standard deviation, > 0.
    pub scale: f64,
    /// Peak density, > 0.
    pub density: f64,
    /// Flat albedo in [0,1] per channel.
    pub albedo: [f64; 3],
}

/// A fully decoded scene: a mixture of Gaussian blobs plus its lighting
/// environment. Instances come out of [`crate::scene::SceneGenerator::decode`];
/// the constructor enforces the parameter ranges the decoder guarantees.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySceneParams {
    pub blobs: Vec<Blob>,
    pub lighting: SHLighting,
}

impl ToySceneParams {
    pub fn new(blobs: Vec<Blob>, lighting: SHLighting) -> Result<Self> {
        if blobs.is_empty() {
            return Err(Error::InvalidArgument(
                "a scene needs at least one blob".into(),
            ));
        }
        for (k, b) in blobs.iter().enumerate() {
            if b.center.iter().any(|c| !c.is_finite() || c.abs() > 0.8) {
                return Err(Error::InvalidArgument(format!(
                    "blob {k} center {:?} leaves [-0.8, 0.8]^3",
                    b.center
                )));
            }
            if !(b.scale.is_finite() && b.scale > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "blob {k} scale must be positive, got {}",
                    b.scale
                )));
            }
            if !(b.density.is_finite() && b.density > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "blob {k} density must be positive, got {}",
                    b.density
                )));
            }
            if b.albedo
                .iter()
                .any(|a| !a.is_finite() || !(0.0..=1.0).contains(a))
            {
                return Err(Error::InvalidArgument(format!(
                    "blob {k} albedo {:?} leaves [0,1]",
                    b.albedo
                )));
            }
        }
        if lighting.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("scene lighting"));
        }
        Ok(Self { blobs, lighting })
    }

    pub fn blob_count(&self) -> usize {
        self.blobs.len()
    }
}

/// Gradient of a scalar loss with respect to every scene parameter, in the
/// same layout the decoder's backward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParamGrads {
    pub d_center: Vec<Vector3<f64>>,
    pub d_scale: Vec<f64>,
    pub d_density: Vec<f64>,
    pub d_albedo: Vec<[f64; 3]>,
    pub d_lighting: [f64; 9],
}

impl SceneParamGrads {
    pub fn zeros(blob_count: usize) -> Self {
        Self {
            d_center: vec![Vector3::zeros(); blob_count],
            d_scale: vec![0.0; blob_count],
            d_density: vec![0.0; blob_count],
            d_albedo: vec![[0.0; 3]; blob_count],
            d_lighting: [0.0; 9],
        }
    }

    pub fn blob_count(&self) -> usize {
        self.d_scale.len()
    }

    /// Elementwise accumulation; shapes must agree.
    pub fn accumulate(&mut self, other: &SceneParamGrads) {
        assert_eq!(self.blob_count(), other.blob_count(), "gradient shape");
        for k in 0..self.blob_count() {
            self.d_center[k] += other.d_center[k];
            self.d_scale[k] += other.d_scale[k];
            self.d_density[k] += other.d_density[k];
            for c in 0..3 {
                self.d_albedo[k][c] += other.d_albedo[k][c];
            }
        }
        for i in 0..9 {
            self.d_lighting[i] += other.d_lighting[i];
        }
    }

    /// Flatten into the decoder's pre-activation row order: per blob
    /// `[cx, cy, cz, scale, density, ar, ag, ab]`, then the 9 lighting
    /// coefficients.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(8 * self.blob_count() + 9);
        for k in 0..self.blob_count() {
            out.extend_from_slice(self.d_center[k].as_slice());
            out.push(self.d_scale[k]);
            out.push(self.d_density[k]);
            out.extend_from_slice(&self.d_albedo[k]);
        }
        out.extend_from_slice(&self.d_lighting);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lighting::{Frame, SHLighting};

    fn unit_blob() -> Blob {
        Blob {
            center: Vector3::zeros(),
            scale: 0.3,
            density: 1.0,
            albedo: [0.5, 0.5, 0.5],
        }
    }

    #[test]
    fn rejects_out_of_range_blobs() {
        let light = SHLighting::ambient(Frame::World, 1.0);
        let mut far = unit_blob();
        far.center.x = 0.9;
        assert!(ToySceneParams::new(vec![far], light).is_err());
        let mut flat = unit_blob();
        flat.scale = 0.0;
        assert!(ToySceneParams::new(vec![flat], light).is_err());
        let mut dark = unit_blob();
        dark.albedo = [1.2, 0.0, 0.0];
        assert!(ToySceneParams::new(vec![dark], light).is_err());
        assert!(ToySceneParams::new(vec![], light).is_err());
        assert!(ToySceneParams::new(vec![unit_blob()], light).is_ok());
    }

    #[test]
    fn grads_accumulate_elementwise() {
        let mut a = SceneParamGrads::zeros(2);
        let mut b = SceneParamGrads::zeros(2);
        a.d_scale[0] = 1.0;
        b.d_scale[0] = 2.0;
        b.d_center[1].y = -1.5;
        b.d_lighting[3] = 0.25;
        a.accumulate(&b);
        assert_eq!(a.d_scale[0], 3.0);
        assert_eq!(a.d_center[1].y, -1.5);
        assert_eq!(a.d_lighting[3], 0.25);
    }

    #[test]
    fn flat_layout_is_blob_rows_then_lighting() {
        let mut g = SceneParamGrads::zeros(1);
        g.d_center[0] = Vector3::new(1.0, 2.0, 3.0);
        g.d_scale[0] = 4.0;
        g.d_density[0] = 5.0;
        g.d_albedo[0] = [6.0, 7.0, 8.0];
        g.d_lighting[0] = 9.0;
        let flat = g.to_flat();
        assert_eq!(flat.len(), 17);
        assert_eq!(&flat[..9], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(flat[16], 0.0);
    }
}
