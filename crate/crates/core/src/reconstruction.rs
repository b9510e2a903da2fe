//! Reference images to pixel-aligned gaussians.
//!
//! Two depth sources are supported: depth supplied with the references
//! (oracle) or a plane-sweep photometric search across the references.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::rasterizer::{GaussianPrimitive, GaussianScene, Provenance};
use crate::real::Real;
use crate::scene_model::{Camera, DepthMap, ImageBuffer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    OracleDepth,
    PlaneSweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub hypotheses: usize,
    pub near: f64,
    pub far: f64,
    pub patch_radius: usize,
    /// Isotropic primitive scale as a multiple of the pixel footprint `depth / fx`.
    pub scale_factor: f64,
    pub initial_opacity: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::OracleDepth,
            hypotheses: 64,
            near: 1.0,
            far: 10.0,
            patch_radius: 1,
            scale_factor: 1.0,
            initial_opacity: 0.8,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::Config(format!(
                "depth bounds must satisfy 0 < near < far (near={}, far={})",
                self.near, self.far
            )));
        }
        if self.hypotheses < 2 {
            return Err(Error::Config("plane sweep needs at least 2 depth hypotheses".into()));
        }
        if !(self.scale_factor > 0.0) {
            return Err(Error::Config("scale factor must be positive".into()));
        }
        if !(self.initial_opacity > 0.0 && self.initial_opacity <= 1.0) {
            return Err(Error::Config("initial opacity must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Depth hypotheses spaced uniformly in inverse depth, far to near.
    pub fn hypothesis_depths(&self) -> Vec<f64> {
        let (inv_far, inv_near) = (1.0 / self.far, 1.0 / self.near);
        let n = self.hypotheses;
        (0..n).map(|k| 1.0 / (inv_far + (inv_near - inv_far) * k as f64 / (n - 1) as f64)).collect()
    }
}

/// Borrowed reference view: image, camera and optional known depth.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceView<'a, T: Real> {
    pub image: &'a ImageBuffer<T>,
    pub camera: &'a Camera<T>,
    pub depth: Option<&'a DepthMap<T>>,
}

/// Plane-sweep output for one target view.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSweep<T: Real> {
    pub depth: DepthMap<T>,
    /// Minimum mean patch cost per pixel (`+inf` where nothing reprojects).
    pub min_cost: Vec<T>,
    /// Full cost volume, hypothesis-major, when requested.
    pub volume: Option<Vec<Vec<T>>>,
}

#[inline]
fn bilinear<T: Real>(img: &ImageBuffer<T>, u: T, v: T) -> Option<[T; 3]> {
    // Continuous coordinates; pixel centers at +0.5.
    let x = u - T::lit(0.5);
    let y = v - T::lit(0.5);
    let (w, h) = img.dims();
    if !(x >= T::zero() && y >= T::zero()) {
        return None;
    }
    let x0 = x.floor().to_usize()?;
    let y0 = y.floor().to_usize()?;
    if x0 + 1 >= w || y0 + 1 >= h {
        // Allow sampling exactly on the last row/column.
        if x0 < w && y0 < h && x == T::from_usize_lossy(x0) && y == T::from_usize_lossy(y0) {
            return Some(img.pixel(x0, y0));
        }
        return None;
    }
    let fx = x - T::from_usize_lossy(x0);
    let fy = y - T::from_usize_lossy(y0);
    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x0 + 1, y0);
    let p01 = img.pixel(x0, y0 + 1);
    let p11 = img.pixel(x0 + 1, y0 + 1);
    let one = T::one();
    let mut out = [T::zero(); 3];
    for c in 0..3 {
        out[c] = (p00[c] * (one - fx) + p10[c] * fx) * (one - fy) + (p01[c] * (one - fx) + p11[c] * fx) * fy;
    }
    Some(out)
}

pub fn plane_sweep_depth<T: Real>(
    target: usize,
    refs: &[ReferenceView<'_, T>],
    cfg: &BackendConfig,
) -> Result<DepthMap<T>> {
    Ok(plane_sweep(target, refs, cfg, false)?.depth)
}

/// Per-pixel winner-take-all over inverse-depth hypotheses. The cost of a
/// hypothesis is the mean over the other references of the mean absolute
/// color difference across the patch.
pub fn plane_sweep<T: Real>(
    target: usize,
    refs: &[ReferenceView<'_, T>],
    cfg: &BackendConfig,
    keep_volume: bool,
) -> Result<PlaneSweep<T>> {
    cfg.validate()?;
    if refs.len() < 2 {
        return Err(Error::InvalidInput(format!("plane sweep needs at least 2 references, got {}", refs.len())));
    }
    let tgt = refs.get(target).ok_or_else(|| Error::InvalidInput(format!("target index {target} out of range")))?;
    check_dims("plane sweep target", tgt.camera.dims(), tgt.image.dims())?;
    let (w, h) = tgt.camera.dims();
    let depths: Vec<T> = cfg.hypothesis_depths().into_iter().map(T::lit).collect();
    let others: Vec<&ReferenceView<'_, T>> =
        refs.iter().enumerate().filter(|(i, _)| *i != target).map(|(_, r)| r).collect();
    let r = cfg.patch_radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    let inf = T::infinity();

    let rows: Vec<(Vec<T>, Vec<T>, Vec<Vec<T>>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut depth_row = vec![T::zero(); w];
            let mut cost_row = vec![inf; w];
            let mut vol_row = if keep_volume { vec![vec![inf; w]; depths.len()] } else { Vec::new() };
            let mut per_ref: Vec<T> = Vec::with_capacity(others.len());
            for x in 0..w {
                let (u, v) = Camera::<T>::pixel_center(x, y);
                let mut best = (inf, None::<usize>);
                for (k, d) in depths.iter().enumerate() {
                    let Ok(world) = tgt.camera.unproject_pixel(u, v, *d) else { continue };
                    per_ref.clear();
                    for other in &others {
                        let Some((ou, ov, _)) = other.camera.project_point(&world).visible() else {
                            continue;
                        };
                        let mut acc = T::zero();
                        let mut ok = true;
                        for (dx, dy) in &offsets {
                            let sx = x as i64 + dx;
                            let sy = y as i64 + dy;
                            if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                                ok = false;
                                break;
                            }
                            let a = tgt.image.pixel(sx as usize, sy as usize);
                            let du = T::lit(*dx as f64);
                            let dv = T::lit(*dy as f64);
                            let Some(b) = bilinear(other.image, ou + du, ov + dv) else {
                                ok = false;
                                break;
                            };
                            acc += (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs();
                        }
                        if ok {
                            per_ref.push(acc / T::from_usize_lossy(offsets.len()));
                        }
                    }
                    if per_ref.is_empty() {
                        continue;
                    }
                    // Order-independent sum so the result does not depend on reference order.
                    per_ref.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
                    let cost = per_ref.iter().copied().sum::<T>() / T::from_usize_lossy(per_ref.len());
                    if keep_volume {
                        vol_row[k][x] = cost;
                    }
                    if cost < best.0 {
                        best = (cost, Some(k));
                    }
                }
                if let Some(k) = best.1 {
                    depth_row[x] = depths[k];
                    cost_row[x] = best.0;
                }
            }
            (depth_row, cost_row, vol_row)
        })
        .collect();

    let mut depth = Vec::with_capacity(w * h);
    let mut min_cost = Vec::with_capacity(w * h);
    let mut volume = keep_volume.then(|| vec![Vec::with_capacity(w * h); depths.len()]);
    for (d, c, vol) in rows {
        depth.extend(d);
        min_cost.extend(c);
        if let Some(v) = volume.as_mut() {
            for (k, row) in vol.into_iter().enumerate() {
                v[k].extend(row);
            }
        }
    }
    Ok(PlaneSweep { depth: DepthMap::new(w, h, depth)?, min_cost, volume })
}

/// One primitive per pixel with positive depth, tagged with `(reference, pixel)`.
pub fn unproject_to_gaussians<T: Real>(
    image: &ImageBuffer<T>,
    depth: &DepthMap<T>,
    cam: &Camera<T>,
    reference: u32,
    cfg: &BackendConfig,
) -> Result<GaussianScene<T>> {
    check_dims("unproject image", cam.dims(), image.dims())?;
    check_dims("unproject depth", cam.dims(), depth.dims())?;
    let (w, h) = cam.dims();
    let kappa = T::lit(cfg.scale_factor);
    let opacity = T::lit(cfg.initial_opacity);
    let mut prims = Vec::with_capacity(depth.valid_count());
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y);
            if d <= T::zero() {
                continue;
            }
            let (u, v) = Camera::<T>::pixel_center(x, y);
            let p = cam.unproject_pixel(u, v, d)?;
            let sigma = kappa * d / cam.fx();
            let g = GaussianPrimitive::isotropic(p, sigma, opacity, image.pixel(x, y))?
                .with_provenance(Provenance { reference, pixel: (y * w + x) as u32 });
            prims.push(g);
        }
    }
    if prims.is_empty() {
        return Err(Error::EmptyScene(format!("reference {reference} has no pixel with positive depth")));
    }
    GaussianScene::new(prims)
}

/// Pixel-aligned reconstruction from all references; reference `i` in the
/// slice becomes provenance reference `i`. References without any valid
/// depth are skipped.
pub fn reconstruct<T: Real>(refs: &[ReferenceView<'_, T>], cfg: &BackendConfig) -> Result<GaussianScene<T>> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(Error::InvalidInput("reconstruction needs at least one reference".into()));
    }
    let mut parts = Vec::with_capacity(refs.len());
    for (i, r) in refs.iter().enumerate() {
        let depth = match cfg.kind {
            BackendKind::OracleDepth => r
                .depth
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("oracle-depth backend: reference {i} has no depth")))?,
            BackendKind::PlaneSweep => plane_sweep_depth(i, refs, cfg)?,
        };
        if depth.valid_count() == 0 {
            log::warn!("reference {i} has no pixel with positive depth; it contributes no primitives");
            continue;
        }
        parts.push(unproject_to_gaussians(r.image, &depth, r.camera, i as u32, cfg)?);
    }
    if parts.is_empty() {
        return Err(Error::EmptyScene("no reference has a pixel with positive depth".into()));
    }
    GaussianScene::concat(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cam() -> Camera<f64> {
        Camera::from_parts(4.0, 4.0, 2.0, 2.0, 4, 4, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn sixteen_pixels_sixteen_primitives() {
        let img = ImageBuffer::filled(4, 4, [0.5; 3]);
        let depth = DepthMap::filled(4, 4, 2.0).unwrap();
        let scene = unproject_to_gaussians(&img, &depth, &cam(), 0, &BackendConfig::default()).unwrap();
        assert_eq!(scene.len(), 16);
        let mut pix: Vec<u32> = scene.primitives().iter().map(|g| g.provenance().unwrap().pixel).collect();
        pix.dedup();
        assert_eq!(pix, (0..16).collect::<Vec<_>>());
        let g = &scene.primitives()[0];
        assert!((g.scale()[0] - 0.5).abs() < 1e-12);
        assert_eq!(g.opacity(), 0.8);
    }

    #[test]
    fn zero_depth_pixels_are_skipped() {
        let img = ImageBuffer::filled(4, 4, [0.5; 3]);
        let mut d = vec![2.0; 16];
        d[5] = 0.0;
        let depth = DepthMap::new(4, 4, d).unwrap();
        let scene = unproject_to_gaussians(&img, &depth, &cam(), 3, &BackendConfig::default()).unwrap();
        assert_eq!(scene.len(), 15);
        assert!(scene.primitives().iter().all(|g| g.provenance().unwrap().pixel != 5));
        let empty = DepthMap::filled(4, 4, 0.0).unwrap();
        assert!(unproject_to_gaussians(&img, &empty, &cam(), 0, &BackendConfig::default()).is_err());
    }

    #[test]
    fn inverse_depth_hypotheses() {
        let cfg = BackendConfig { near: 1.0, far: 4.0, hypotheses: 4, ..Default::default() };
        let d = cfg.hypothesis_depths();
        assert_eq!(d.len(), 4);
        assert!((d[0] - 4.0).abs() < 1e-12 && (d[3] - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
        assert!(((inv[1] - inv[0]) - (inv[2] - inv[1])).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig { near: 2.0, far: 1.0, ..Default::default() }.validate().is_err());
        assert!(BackendConfig { hypotheses: 1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn plane_sweep_needs_two_refs() {
        let img = ImageBuffer::filled(4, 4, [0.5; 3]);
        let c = cam();
        let r = [ReferenceView { image: &img, camera: &c, depth: None }];
        assert!(plane_sweep_depth(0, &r, &BackendConfig::default()).is_err());
    }
}
