//! Gaussian primitives and their perspective (EWA) projection to screen space.

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene_model::Camera;

/// Source reference view and pixel of a pixel-aligned primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub reference: u32,
    pub pixel: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive<T: Real> {
    position: Vector3<T>,
    opacity: T,
    scale: Vector3<T>,
    /// Unit quaternion `(w, x, y, z)`.
    rotation: [T; 4],
    color: [T; 3],
    provenance: Option<Provenance>,
}

impl<T: Real> GaussianPrimitive<T> {
    pub fn new(position: Vector3<T>, opacity: T, scale: Vector3<T>, rotation: [T; 4], color: [T; 3]) -> Result<Self> {
        if !position.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("gaussian position must be finite".into()));
        }
        if !(opacity >= T::zero() && opacity <= T::one()) {
            return Err(Error::InvalidInput(format!("opacity {opacity} outside [0, 1]")));
        }
        if !scale.iter().all(|s| s.is_finite() && *s > T::zero()) {
            return Err(Error::InvalidInput("gaussian scales must be positive and finite".into()));
        }
        let norm2: T = rotation.iter().map(|q| *q * *q).sum();
        if !((norm2.sqrt() - T::one()).abs() <= T::lit(1e-6)) {
            return Err(Error::InvalidInput(format!("rotation quaternion norm {} is not 1", norm2.sqrt())));
        }
        if !color.iter().all(|c| *c >= T::zero() && *c <= T::one()) {
            return Err(Error::InvalidInput("gaussian color outside [0, 1]".into()));
        }
        Ok(Self { position, opacity, scale, rotation, color, provenance: None })
    }

    /// Isotropic primitive with identity rotation.
    pub fn isotropic(position: Vector3<T>, sigma: T, opacity: T, color: [T; 3]) -> Result<Self> {
        Self::new(
            position,
            opacity,
            Vector3::new(sigma, sigma, sigma),
            [T::one(), T::zero(), T::zero(), T::zero()],
            color,
        )
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn position(&self) -> &Vector3<T> {
        &self.position
    }

    pub fn opacity(&self) -> T {
        self.opacity
    }

    pub fn scale(&self) -> &Vector3<T> {
        &self.scale
    }

    pub fn rotation(&self) -> [T; 4] {
        self.rotation
    }

    pub fn color(&self) -> [T; 3] {
        self.color
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.provenance
    }

    /// Sets opacity, clamped to `[0, 1]`.
    pub fn set_opacity(&mut self, opacity: T) {
        self.opacity = clamp01(opacity);
    }

    /// Sets color, each channel clamped to `[0, 1]`.
    pub fn set_color(&mut self, color: [T; 3]) {
        self.color = color.map(clamp01);
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        quaternion_to_matrix(self.rotation)
    }

    /// World-space covariance `R S S^T R^T`.
    pub fn covariance(&self) -> Matrix3<T> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }
}

fn clamp01<T: Real>(x: T) -> T {
    if x.is_nan() {
        T::zero()
    } else {
        x.max(T::zero()).min(T::one())
    }
}

pub fn quaternion_to_matrix<T: Real>(q: [T; 4]) -> Matrix3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::lit(2.0);
    Matrix3::new(
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    )
}

/// Hamilton product `a * b`.
pub fn quaternion_mul<T: Real>(a: [T; 4], b: [T; 4]) -> [T; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Ordered primitive collection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianScene<T: Real> {
    primitives: Vec<GaussianPrimitive<T>>,
}

impl<T: Real> GaussianScene<T> {
    /// Fails when two primitives share a provenance tag.
    pub fn new(primitives: Vec<GaussianPrimitive<T>>) -> Result<Self> {
        let mut tags: Vec<Provenance> = primitives.iter().filter_map(|p| p.provenance).collect();
        tags.sort_unstable();
        if let Some(w) = tags.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!(
                "duplicate provenance (reference {}, pixel {})",
                w[0].reference, w[0].pixel
            )));
        }
        Ok(Self { primitives })
    }

    pub fn primitives(&self) -> &[GaussianPrimitive<T>] {
        &self.primitives
    }

    pub fn primitives_mut(&mut self) -> &mut [GaussianPrimitive<T>] {
        &mut self.primitives
    }

    pub fn into_primitives(self) -> Vec<GaussianPrimitive<T>> {
        self.primitives
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Concatenation; provenance uniqueness is rechecked.
    pub fn concat(scenes: impl IntoIterator<Item = Self>) -> Result<Self> {
        Self::new(scenes.into_iter().flat_map(|s| s.primitives).collect())
    }
}

/// Screen-space footprint of one primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat<T: Real> {
    /// Index of the primitive in its scene.
    pub source: u32,
    pub mean: [T; 2],
    /// Symmetric 2x2 covariance `[xx, xy, yy]` including the low-pass dilation.
    pub cov: [T; 3],
    /// Inverse covariance `[xx, xy, yy]`.
    pub conic: [T; 3],
    pub depth: T,
    pub opacity: T,
    pub color: [T; 3],
    /// Pixel radius beyond which the primitive's alpha is below the contribution cutoff.
    pub radius: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplatProjection<T: Real> {
    Visible(Splat<T>),
    /// Behind the near plane, off screen, or too transparent to ever contribute.
    Culled,
    /// Screen covariance condition number above the singularity limit.
    Singular,
}

pub const LOWPASS_DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
pub const MAX_CONDITION: f64 = 1e8;

/// Screen covariance and mean of `g` before any culling decision.
///
/// Returns `None` when the primitive is at or behind `near`.
pub fn screen_footprint<T: Real>(g: &GaussianPrimitive<T>, cam: &Camera<T>, near: T) -> Option<([T; 2], [T; 3], T)> {
    let t = cam.world_to_camera(&g.position);
    if t.z <= near {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let zi = T::one() / z;
    let j = Matrix2x3::new(
        cam.fx() * zi,
        T::zero(),
        -cam.fx() * x * zi * zi,
        T::zero(),
        cam.fy() * zi,
        -cam.fy() * y * zi * zi,
    );
    let w = cam.rotation();
    let m = j * w;
    let cov = m * g.covariance() * m.transpose();
    let dil = T::lit(LOWPASS_DILATION);
    let mean = [cam.fx() * x * zi + cam.cx(), cam.fy() * y * zi + cam.cy()];
    Some((mean, [cov[(0, 0)] + dil, cov[(0, 1)], cov[(1, 1)] + dil], z))
}

/// Projects a primitive; culls against `near` and the image rectangle.
pub fn project_gaussian<T: Real>(g: &GaussianPrimitive<T>, cam: &Camera<T>) -> SplatProjection<T> {
    project_gaussian_with(g, cam, T::lit(crate::rasterizer::DEFAULT_NEAR), true, 0)
}

pub(crate) fn project_gaussian_with<T: Real>(
    g: &GaussianPrimitive<T>,
    cam: &Camera<T>,
    near: T,
    cull_screen: bool,
    source: u32,
) -> SplatProjection<T> {
    let Some((mean, cov, depth)) = screen_footprint(g, cam, near) else {
        return SplatProjection::Culled;
    };
    let [a, b, c] = cov;
    let det = a * c - b * b;
    let half_tr = (a + c) * T::lit(0.5);
    let disc = (half_tr * half_tr - det).max(T::zero()).sqrt();
    let lmax = half_tr + disc;
    let lmin = half_tr - disc;
    if !(det > T::zero()) || !(lmin > T::zero()) || (lmax / lmin).as_f64() > MAX_CONDITION {
        return SplatProjection::Singular;
    }
    let gain = g.opacity * T::lit(1.0 / ALPHA_CUTOFF);
    if cull_screen && gain <= T::one() {
        return SplatProjection::Culled;
    }
    let radius = if gain > T::one() { (T::lit(2.0) * gain.ln() * lmax).sqrt() } else { T::zero() };
    let conic = [c / det, -b / det, a / det];
    if cull_screen {
        let w = T::from_usize_lossy(cam.width());
        let h = T::from_usize_lossy(cam.height());
        let half = T::lit(0.5);
        if mean[0] + radius < half
            || mean[0] - radius > w - half
            || mean[1] + radius < half
            || mean[1] - radius > h - half
        {
            return SplatProjection::Culled;
        }
    }
    SplatProjection::Visible(Splat { source, mean, cov, conic, depth, opacity: g.opacity, color: g.color, radius })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_cam(f: f64) -> Camera<f64> {
        Camera::from_parts(f, f, 32.0, 32.0, 64, 64, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    fn cov_of(p: SplatProjection<f64>) -> [f64; 3] {
        match p {
            SplatProjection::Visible(s) => s.cov,
            other => panic!("expected visible splat, got {other:?}"),
        }
    }

    #[test]
    fn isotropic_on_axis_closed_form() {
        let (f, sigma, z) = (50.0, 0.05, 2.5);
        let g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, z), sigma, 0.5, [1.0, 0.0, 0.0]).unwrap();
        let cov = cov_of(project_gaussian(&g, &axis_cam(f)));
        let expect = f * f * sigma * sigma / (z * z) + 0.3;
        assert!((cov[0] - expect).abs() < 1e-12);
        assert!((cov[2] - expect).abs() < 1e-12);
        assert!(cov[1].abs() < 1e-12);
    }

    #[test]
    fn isotropic_invariant_under_rotation() {
        let cam = axis_cam(40.0);
        let base = GaussianPrimitive::isotropic(Vector3::new(0.3, -0.2, 3.0), 0.1, 0.7, [0.2; 3]).unwrap();
        let reference = cov_of(project_gaussian(&base, &cam));
        let n = (0.3f64 * 0.3 + 0.5 * 0.5 + 0.1 * 0.1 + 0.8 * 0.8).sqrt();
        let q = [0.3 / n, 0.5 / n, -0.1 / n, 0.8 / n];
        let rotated = GaussianPrimitive::new(*base.position(), 0.7, *base.scale(), q, [0.2; 3]).unwrap();
        let cov = cov_of(project_gaussian(&rotated, &cam));
        for k in 0..3 {
            assert!((cov[k] - reference[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn behind_camera_culled() {
        let g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, -1.0), 0.1, 0.9, [1.0; 3]).unwrap();
        assert_eq!(project_gaussian(&g, &axis_cam(10.0)), SplatProjection::Culled);
    }

    #[test]
    fn offscreen_culled() {
        let g = GaussianPrimitive::isotropic(Vector3::new(50.0, 0.0, 1.0), 0.01, 0.9, [1.0; 3]).unwrap();
        assert_eq!(project_gaussian(&g, &axis_cam(10.0)), SplatProjection::Culled);
    }

    #[test]
    fn rejects_invalid_primitives() {
        let p = Vector3::new(0.0, 0.0, 1.0);
        assert!(GaussianPrimitive::isotropic(p, -0.1, 0.5, [0.0; 3]).is_err());
        assert!(GaussianPrimitive::isotropic(p, 0.1, 1.5, [0.0; 3]).is_err());
        assert!(GaussianPrimitive::new(p, 0.5, Vector3::new(0.1, 0.1, 0.1), [1.0, 0.1, 0.0, 0.0], [0.0; 3]).is_err());
        assert!(GaussianPrimitive::isotropic(Vector3::new(f64::NAN, 0.0, 1.0), 0.1, 0.5, [0.0; 3]).is_err());
    }

    #[test]
    fn duplicate_provenance_rejected() {
        let tag = Provenance { reference: 0, pixel: 3 };
        let g =
            GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 1.0), 0.1, 0.5, [0.0; 3]).unwrap().with_provenance(tag);
        assert!(GaussianScene::new(vec![g.clone(), g]).is_err());
    }

    #[test]
    fn quaternion_matrix_is_rotation() {
        let n = (1.0f64 + 4.0 + 9.0 + 16.0).sqrt();
        let q = [1.0 / n, 2.0 / n, 3.0 / n, 4.0 / n];
        let r = quaternion_to_matrix(q);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let id = quaternion_mul(q, [q[0], -q[1], -q[2], -q[3]]);
        assert!((id[0] - 1.0).abs() < 1e-12);
    }
}
