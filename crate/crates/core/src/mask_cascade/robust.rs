//! Residual-threshold outlier masks with kernel voting.

use crate::error::{check_dims, Result};
use crate::real::Real;
use crate::scene_model::{BinaryMask, ImageBuffer};

use super::MaskCascadeConfig;

/// Mean of `values` over a `k x k` window around each pixel, clipped to the
/// image. Even kernels span `[-k/2, k/2 - 1]`.
pub(crate) fn box_mean(values: &[f64], width: usize, height: usize, k: usize) -> Vec<f64> {
    let stride = width + 1;
    let mut integral = vec![0.0; stride * (height + 1)];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += values[y * width + x];
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let lo = (k / 2) as i64;
    let hi = (k as i64 - 1) - lo;
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let y0 = (y as i64 - lo).max(0) as usize;
        let y1 = ((y as i64 + hi).min(height as i64 - 1) + 1) as usize;
        for x in 0..width {
            let x0 = (x as i64 - lo).max(0) as usize;
            let x1 = ((x as i64 + hi).min(width as i64 - 1) + 1) as usize;
            let sum = integral[y1 * stride + x1] - integral[y0 * stride + x1] - integral[y1 * stride + x0]
                + integral[y0 * stride + x0];
            out[y * width + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Inlier threshold actually used for a residual field.
pub fn residual_threshold(residuals: &[f64], cfg: &MaskCascadeConfig) -> f64 {
    (cfg.rho1_scale * median(residuals)).max(cfg.rho1_floor)
}

/// 1 = static. Residuals are channel-mean squared differences; pixels below
/// the median-scaled threshold are inliers, and the inlier field is smoothed
/// by a box kernel and then a patch kernel before thresholding at `rho2`.
pub fn robust_mask<T: Real>(
    query: &ImageBuffer<T>,
    rendered: &ImageBuffer<T>,
    cfg: &MaskCascadeConfig,
) -> Result<BinaryMask> {
    check_dims("robust mask", query.dims(), rendered.dims())?;
    let (w, h) = query.dims();
    let residuals: Vec<f64> = query.squared_residual(rendered)?.into_iter().map(|r| r.as_f64()).collect();
    let mean = residuals.iter().sum::<f64>() / residuals.len().max(1) as f64;
    if mean > cfg.residual_warning {
        log::warn!(
            "robust mask: mean residual {mean:.4} exceeds {:.4}; the median-scaled threshold adapts to uniform error and will report mostly static pixels",
            cfg.residual_warning
        );
    }
    let rho1 = residual_threshold(&residuals, cfg);
    let inliers: Vec<f64> = residuals.iter().map(|r| if *r < rho1 { 1.0 } else { 0.0 }).collect();
    let smoothed = box_mean(&inliers, w, h, cfg.box_kernel);
    let voted = box_mean(&smoothed, w, h, cfg.patch_kernel);
    BinaryMask::new(w, h, voted.into_iter().map(|v| v > cfg.rho2).collect())
}

/// 1 where the re-rendered reference matches the reference image:
/// channel-mean squared residual strictly below `rho_ref`.
pub fn reference_static_mask<T: Real>(
    reference: &ImageBuffer<T>,
    rendered: &ImageBuffer<T>,
    rho_ref: f64,
) -> Result<BinaryMask> {
    check_dims("reference static mask", reference.dims(), rendered.dims())?;
    let (w, h) = reference.dims();
    let r = reference.squared_residual(rendered)?;
    BinaryMask::new(w, h, r.into_iter().map(|v| v.as_f64() < rho_ref).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> ImageBuffer<f64> {
        ImageBuffer::from_fn(w, h, |x, y| {
            let a = x as f64 / w as f64;
            let b = y as f64 / h as f64;
            [0.2 + 0.5 * a, 0.3 + 0.4 * b, 0.5 * (a + b) * 0.5 + 0.2]
        })
    }

    #[test]
    fn box_mean_of_constant_is_constant() {
        let m = box_mean(&[2.0; 20], 5, 4, 3);
        assert!(m.iter().all(|v| (*v - 2.0).abs() < 1e-12));
        let m = box_mean(&[1.0; 20], 5, 4, 16);
        assert!(m.iter().all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identical_images_are_static() {
        let img = gradient_image(32, 32);
        let m = robust_mask(&img, &img, &MaskCascadeConfig::default()).unwrap();
        assert_eq!(m.count_zeros(), 0);
    }

    #[test]
    fn bright_square_is_flagged() {
        let clean = gradient_image(128, 128);
        let query = ImageBuffer::from_fn(128, 128, |x, y| {
            if (48..80).contains(&x) && (40..72).contains(&y) {
                [1.0, 1.0, 1.0]
            } else {
                clean.pixel(x, y)
            }
        });
        let m = robust_mask(&query, &clean, &MaskCascadeConfig::default()).unwrap();
        let mut inside_zero = 0;
        let mut outside_zero = 0;
        for y in 0..128 {
            for x in 0..128 {
                let inside = (48..80).contains(&x) && (40..72).contains(&y);
                if !m.get(x, y) {
                    if inside {
                        inside_zero += 1;
                    } else {
                        outside_zero += 1;
                    }
                }
            }
        }
        assert!(inside_zero as f64 >= 0.8 * 1024.0, "inside zeros {inside_zero}");
        assert!(outside_zero as f64 <= 0.05 * (128.0 * 128.0 - 1024.0), "outside zeros {outside_zero}");
    }

    #[test]
    fn uniform_error_adapts_to_all_static() {
        // Every pixel is off by the same large amount.
        let img = ImageBuffer::filled(32, 32, [0.1, 0.2, 0.15]);
        let inverted = ImageBuffer::from_fn(32, 32, |x, y| img.pixel(x, y).map(|c| 1.0 - c));
        let m = robust_mask(&inverted, &img, &MaskCascadeConfig::default()).unwrap();
        assert_eq!(m.count_zeros(), 0);
    }

    #[test]
    fn reference_mask_strict_threshold() {
        let a = ImageBuffer::filled(2, 1, [0.5; 3]);
        let b = ImageBuffer::new(2, 1, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5 + 0.001f64.sqrt() * 3f64.sqrt()]).unwrap();
        let m = reference_static_mask(&a, &a, 0.001).unwrap();
        assert_eq!(m.count_ones(), 2);
        let r = a.squared_residual(&b).unwrap()[1];
        let m = reference_static_mask(&a, &b, r).unwrap();
        assert_eq!(m.data(), &[true, false]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = ImageBuffer::<f64>::filled(2, 2, [0.0; 3]);
        let b = ImageBuffer::<f64>::filled(2, 3, [0.0; 3]);
        assert!(robust_mask(&a, &b, &MaskCascadeConfig::default()).is_err());
        assert!(reference_static_mask(&a, &b, 0.001).is_err());
    }
}
