//! Forward depth warping between views with an occlusion z-test.

use crate::error::{check_dims, Result};
use crate::real::Real;
use crate::scene_model::{BinaryMask, Camera, DepthMap, ImageBuffer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WarpStats {
    /// Source samples considered (mask bit set, depth > 0).
    pub sources: usize,
    pub landed: usize,
    pub out_of_bounds: usize,
    pub behind_camera: usize,
    pub occluded: usize,
}

/// Where a source pixel lands in the destination view, if it passes the
/// bounds and occlusion tests.
#[inline]
fn land<T: Real>(
    x: usize,
    y: usize,
    d: T,
    src: &Camera<T>,
    dst: &Camera<T>,
    dst_depth: &DepthMap<T>,
    tol: T,
    stats: &mut WarpStats,
) -> Option<(usize, T)> {
    let (u, v) = Camera::<T>::pixel_center(x, y);
    let world = src.unproject_pixel(u, v, d).ok()?;
    let Some((du, dv, z)) = dst.project_point(&world).visible() else {
        stats.behind_camera += 1;
        return None;
    };
    // Nearest pixel center to (du, dv) is the pixel containing it.
    let Some((px, py)) = dst.pixel_of(du, dv) else {
        stats.out_of_bounds += 1;
        return None;
    };
    let ref_z = dst_depth.get(px, py);
    if ref_z > T::zero() && (z - ref_z).abs() > tol * ref_z {
        stats.occluded += 1;
        return None;
    }
    stats.landed += 1;
    Some((py * dst.width() + px, z))
}

fn check_inputs<T: Real>(
    src_dims: (usize, usize),
    depth: &DepthMap<T>,
    cam_src: &Camera<T>,
    cam_dst: &Camera<T>,
    dst_depth: &DepthMap<T>,
) -> Result<()> {
    check_dims("warp source", cam_src.dims(), src_dims)?;
    check_dims("warp source depth", cam_src.dims(), depth.dims())?;
    check_dims("warp destination depth", cam_dst.dims(), dst_depth.dims())
}

/// Forward-warps the 1-bits of `mask` from `cam_src` into `cam_dst`.
///
/// Each source pixel with bit 1 and positive depth is unprojected, reprojected
/// and rounded to the nearest destination pixel. It lands only when
/// `|z - dst_depth| <= z_tolerance * dst_depth` or the destination has no
/// surface. Destination pixels nothing lands on are 0.
pub fn warp_mask<T: Real>(
    mask: &BinaryMask,
    depth: &DepthMap<T>,
    cam_src: &Camera<T>,
    cam_dst: &Camera<T>,
    dst_depth: &DepthMap<T>,
    z_tolerance: f64,
) -> Result<(BinaryMask, WarpStats)> {
    check_inputs(mask.dims(), depth, cam_src, cam_dst, dst_depth)?;
    let (w, h) = cam_src.dims();
    let tol = T::lit(z_tolerance);
    let mut out = vec![false; cam_dst.width() * cam_dst.height()];
    let mut stats = WarpStats::default();
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y);
            if !mask.get(x, y) || d <= T::zero() {
                continue;
            }
            stats.sources += 1;
            if let Some((i, _)) = land(x, y, d, cam_src, cam_dst, dst_depth, tol, &mut stats) {
                out[i] = true;
            }
        }
    }
    Ok((BinaryMask::new(cam_dst.width(), cam_dst.height(), out)?, stats))
}

/// Forward-warps image colors, keeping the nearest landing sample per
/// destination pixel. `None` where nothing lands.
pub fn warp_image<T: Real>(
    image: &ImageBuffer<T>,
    depth: &DepthMap<T>,
    cam_src: &Camera<T>,
    cam_dst: &Camera<T>,
    dst_depth: &DepthMap<T>,
    z_tolerance: f64,
) -> Result<Vec<Option<[T; 3]>>> {
    check_inputs(image.dims(), depth, cam_src, cam_dst, dst_depth)?;
    let (w, h) = cam_src.dims();
    let tol = T::lit(z_tolerance);
    let mut best: Vec<Option<(T, [T; 3])>> = vec![None; cam_dst.width() * cam_dst.height()];
    let mut stats = WarpStats::default();
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y);
            if d <= T::zero() {
                continue;
            }
            if let Some((i, z)) = land(x, y, d, cam_src, cam_dst, dst_depth, tol, &mut stats) {
                if best[i].is_none_or(|(bz, _)| z < bz) {
                    best[i] = Some((z, image.pixel(x, y)));
                }
            }
        }
    }
    Ok(best.into_iter().map(|b| b.map(|(_, c)| c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cam_at(tx: f64, f: f64) -> Camera<f64> {
        // World-to-camera translation -C for a camera centered at (tx, 0, 0).
        Camera::from_parts(f, f, 32.0, 24.0, 64, 48, Matrix3::identity(), Vector3::new(-tx, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn self_warp_is_identity_on_covered_bits() {
        let cam = cam_at(0.0, 40.0);
        let depth = DepthMap::new(
            64,
            48,
            (0..64 * 48).map(|i| if i % 7 == 0 { 0.0 } else { 2.0 + (i % 5) as f64 * 0.1 }).collect(),
        )
        .unwrap();
        let mask = BinaryMask::from_fn(64, 48, |x, y| (x * 3 + y) % 4 != 0);
        let (out, _) = warp_mask(&mask, &depth, &cam, &cam, &depth, 0.01).unwrap();
        for i in 0..64 * 48 {
            if mask.at(i) && depth.data()[i] > 0.0 {
                assert!(out.at(i));
            }
        }
    }

    #[test]
    fn zero_mask_warps_to_zero() {
        let cam = cam_at(0.0, 40.0);
        let depth = DepthMap::filled(64, 48, 2.0).unwrap();
        let (out, stats) = warp_mask(&BinaryMask::zeros(64, 48), &depth, &cam, &cam, &depth, 0.01).unwrap();
        assert_eq!(out.count_ones(), 0);
        assert_eq!(stats.sources, 0);
    }

    #[test]
    fn horizontal_baseline_shifts_by_rounded_disparity() {
        let (f, b, z) = (40.0, 0.13, 2.0);
        let src = cam_at(0.0, f);
        let dst = cam_at(b, f);
        let depth = DepthMap::filled(64, 48, z).unwrap();
        let mask = BinaryMask::from_fn(64, 48, |x, y| x == 30 && y == 10);
        let (out, _) = warp_mask(&mask, &depth, &src, &dst, &depth, 0.01).unwrap();
        let shift = (f * b / z).round() as usize; // 2.6 -> 3
        assert_eq!(shift, 3);
        assert_eq!(out.count_ones(), 1);
        assert!(out.get(30 - shift, 10));
    }

    #[test]
    fn occluded_samples_do_not_land() {
        let cam = cam_at(0.0, 40.0);
        let depth = DepthMap::filled(64, 48, 2.0).unwrap();
        let nearer = DepthMap::filled(64, 48, 1.0).unwrap();
        let (out, stats) = warp_mask(&BinaryMask::ones(64, 48), &depth, &cam, &cam, &nearer, 0.01).unwrap();
        assert_eq!(out.count_ones(), 0);
        assert_eq!(stats.occluded, 64 * 48);
    }
}
