//! Pinhole camera with world-to-camera extrinsics.
//!
//! Camera frame: x right, y down, z forward. Pixel `(i, j)` covers
//! `[i, i+1) x [j, j+1)` so its center sits at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection<T> {
    /// In front of the camera; `(u, v)` are subpixel image coordinates.
    Visible { u: T, v: T, z: T },
    /// Camera-frame depth `z <= 0`.
    BehindCamera { z: T },
}

impl<T: Real> Projection<T> {
    pub fn visible(self) -> Option<(T, T, T)> {
        match self {
            Projection::Visible { u, v, z } => Some((u, v, z)),
            Projection::BehindCamera { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
    fx: T,
    fy: T,
    cx: T,
    cy: T,
    width: usize,
    height: usize,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

impl<T: Real> Camera<T> {
    /// Builds a camera from a 3x3 intrinsic matrix and a 4x4 world-to-camera transform.
    pub fn new(intrinsics: Matrix3<T>, extrinsics: Matrix4<T>, width: usize, height: usize) -> Result<Self> {
        let k = intrinsics;
        let zero = T::zero();
        if k[(0, 1)] != zero || k[(1, 0)] != zero || k[(2, 0)] != zero || k[(2, 1)] != zero {
            return Err(Error::InvalidCamera("intrinsics must be upper triangular with zero skew".into()));
        }
        if k[(2, 2)] != T::one() {
            return Err(Error::InvalidCamera("intrinsics K[2][2] must be 1".into()));
        }
        let e = extrinsics;
        if e[(3, 0)] != zero || e[(3, 1)] != zero || e[(3, 2)] != zero || e[(3, 3)] != T::one() {
            return Err(Error::InvalidCamera("extrinsics bottom row must be [0 0 0 1]".into()));
        }
        let rotation = e.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = e.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_parts(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], width, height, rotation, translation)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        rotation: Matrix3<T>,
        translation: Vector3<T>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be nonzero".into()));
        }
        let finite = [fx, fy, cx, cy].iter().all(|x| x.is_finite())
            && rotation.iter().all(|x| x.is_finite())
            && translation.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidCamera("non-finite camera entry".into()));
        }
        if fx <= T::zero() || fy <= T::zero() {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive (fx={fx}, fy={fy})")));
        }
        let w = T::from_usize_lossy(width);
        let h = T::from_usize_lossy(height);
        if cx < T::zero() || cx >= w || cy < T::zero() || cy >= h {
            return Err(Error::InvalidCamera(format!("principal point ({cx}, {cy}) outside {width}x{height}")));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let err = gram.iter().fold(0.0f64, |m, x| m.max(x.abs().as_f64()));
        if err >= ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!("rotation is not orthonormal (|R^T R - I|_inf = {err:.3e})")));
        }
        if det3(&rotation) <= T::zero() {
            return Err(Error::InvalidCamera("rotation has negative determinant".into()));
        }
        Ok(Self { rotation, translation, fx, fy, cx, cy, width, height })
    }

    /// Camera at `eye` looking at `target`. `up` is the approximate world up
    /// direction; image y points away from it.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<T>,
        target: Vector3<T>,
        up: Vector3<T>,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        let fnorm = forward.dot(&forward).sqrt();
        if fnorm <= T::zero() {
            return Err(Error::InvalidCamera("eye coincides with target".into()));
        }
        let z = forward / fnorm;
        let x = z.cross(&up);
        let xnorm = x.dot(&x).sqrt();
        if xnorm <= T::lit(1e-12) {
            return Err(Error::InvalidCamera("up vector parallel to view direction".into()));
        }
        let x = x / xnorm;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self::from_parts(fx, fy, cx, cy, width, height, rotation, translation)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn fx(&self) -> T {
        self.fx
    }

    pub fn fy(&self) -> T {
        self.fy
    }

    pub fn cx(&self) -> T {
        self.cx
    }

    pub fn cy(&self) -> T {
        self.cy
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn intrinsics(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    pub fn extrinsics(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn project_point(&self, point: &Vector3<T>) -> Projection<T> {
        let pc = self.world_to_camera(point);
        self.project_camera_point(&pc)
    }

    #[inline]
    pub fn project_camera_point(&self, pc: &Vector3<T>) -> Projection<T> {
        let z = pc.z;
        if z <= T::zero() {
            return Projection::BehindCamera { z };
        }
        Projection::Visible { u: self.fx * pc.x / z + self.cx, v: self.fy * pc.y / z + self.cy, z }
    }

    /// World point at camera-frame depth `depth` along the ray through `(u, v)`.
    pub fn unproject_pixel(&self, u: T, v: T, depth: T) -> Result<Vector3<T>> {
        if !(depth > T::zero()) || !depth.is_finite() {
            return Err(Error::InvalidInput(format!("unproject depth must be positive and finite, got {depth}")));
        }
        let pc = Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        Ok(self.camera_to_world(&pc))
    }

    /// Center of pixel `(x, y)`.
    #[inline]
    pub fn pixel_center(x: usize, y: usize) -> (T, T) {
        let half = T::lit(0.5);
        (T::from_usize_lossy(x) + half, T::from_usize_lossy(y) + half)
    }

    /// Pixel containing subpixel coordinate `(u, v)`, if inside the image.
    #[inline]
    pub fn pixel_of(&self, u: T, v: T) -> Option<(usize, usize)> {
        if !(u >= T::zero() && v >= T::zero()) {
            return None;
        }
        let x = u.floor().to_usize()?;
        let y = v.floor().to_usize()?;
        (x < self.width && y < self.height).then_some((x, y))
    }

    /// Same pose, intrinsics and resolution multiplied by `scale`.
    pub fn scaled(&self, scale: T) -> Result<Self> {
        if !(scale > T::zero()) {
            return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
        }
        let w = (T::from_usize_lossy(self.width) * scale).round().to_usize().unwrap_or(0).max(1);
        let h = (T::from_usize_lossy(self.height) * scale).round().to_usize().unwrap_or(0).max(1);
        Self::from_parts(
            self.fx * scale,
            self.fy * scale,
            self.cx * scale,
            self.cy * scale,
            w,
            h,
            self.rotation,
            self.translation,
        )
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |x: T| U::lit(x.as_f64());
        Camera {
            rotation: self.rotation.map(c),
            translation: self.translation.map(c),
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
        }
    }
}

fn det3<T: Real>(m: &Matrix3<T>) -> T {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam(f: f64, c: f64, w: usize, h: usize) -> Camera<f64> {
        Camera::from_parts(f, f, c, c, w, h, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn identity_projection_of_optical_axis() {
        let cam = identity_cam(1.0, 0.0, 4, 4);
        assert_eq!(cam.project_point(&Vector3::new(0.0, 0.0, 1.0)), Projection::Visible { u: 0.0, v: 0.0, z: 1.0 });
    }

    #[test]
    fn projection_hand_evaluated() {
        let cam = identity_cam(100.0, 128.0, 256, 256);
        let (u, v, z) = cam.project_point(&Vector3::new(0.5, 0.0, 2.0)).visible().unwrap();
        assert_eq!((u, v, z), (153.0, 128.0, 2.0));
    }

    #[test]
    fn behind_camera_is_tagged() {
        let cam = identity_cam(1.0, 0.0, 4, 4);
        assert!(matches!(cam.project_point(&Vector3::new(0.0, 0.0, -1.0)), Projection::BehindCamera { .. }));
    }

    #[test]
    fn unproject_identity() {
        let cam = identity_cam(1.0, 0.0, 4, 4);
        let p = cam.unproject_pixel(0.0, 0.0, 5.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn unproject_rejects_nonpositive_depth() {
        let cam = identity_cam(1.0, 0.0, 4, 4);
        assert!(cam.unproject_pixel(0.0, 0.0, 0.0).is_err());
        assert!(cam.unproject_pixel(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn round_trip_at_pixel_center() {
        let cam: Camera<f64> = Camera::look_at(
            Vector3::new(1.0, -0.5, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            90.0,
            95.0,
            64.0,
            48.0,
            128,
            96,
        )
        .unwrap();
        let p = cam.unproject_pixel(64.5, 32.5, 3.0).unwrap();
        let (u, v, z) = cam.project_point(&p).visible().unwrap();
        assert!((u - 64.5).abs() < 1e-5 && (v - 32.5).abs() < 1e-5 && (z - 3.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_rotation_and_intrinsics() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.01;
        assert!(Camera::from_parts(1.0, 1.0, 0.0, 0.0, 4, 4, r, Vector3::zeros()).is_err());
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Camera::from_parts(1.0, 1.0, 0.0, 0.0, 4, 4, r, Vector3::zeros()).is_err());
        let i = Matrix3::identity();
        assert!(Camera::<f64>::from_parts(0.0, 1.0, 0.0, 0.0, 4, 4, i, Vector3::zeros()).is_err());
        assert!(Camera::<f64>::from_parts(1.0, 1.0, 4.0, 0.0, 4, 4, i, Vector3::zeros()).is_err());
        let mut k = Matrix3::identity();
        k[(0, 1)] = 0.1;
        assert!(Camera::<f64>::new(k, Matrix4::identity(), 4, 4).is_err());
    }

    #[test]
    fn matrices_round_trip_through_new() {
        let cam = Camera::look_at(
            Vector3::new(0.3, 0.2, -3.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            50.0,
            50.0,
            32.0,
            32.0,
            64,
            64,
        )
        .unwrap();
        let again = Camera::new(cam.intrinsics(), cam.extrinsics(), 64, 64).unwrap();
        assert_eq!(cam, again);
        assert!((cam.center() - Vector3::new(0.3, 0.2, -3.0)).norm() < 1e-12);
    }
}
