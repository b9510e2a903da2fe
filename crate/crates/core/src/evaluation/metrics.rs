//! Image and mask quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::real::Real;
use crate::scene_model::{BinaryMask, ImageBuffer};

/// Peak signal-to-noise ratio at unit dynamic range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Psnr {
    Finite(f64),
    /// Identical inputs.
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

/// `10 log10(1 / MSE)` with the MSE over all channels.
pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<Psnr> {
    check_dims("psnr", a.dims(), b.dims())?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / n;
    Ok(if mse == 0.0 { Psnr::Infinite } else { Psnr::Finite(10.0 * (1.0 / mse).log10()) })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// averaged over channels. Only windows fully inside the image are used.
pub fn ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    check_dims("ssim", a.dims(), b.dims())?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = (0..w * h).map(|i| a.data()[i * 3 + c].as_f64()).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data()[i * 3 + c].as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter_valid(&x, w, h, &k), filter_valid(&y, w, h, &k));
        let (sxx, syy, sxy) = (filter_valid(&xx, w, h, &k), filter_valid(&yy, w, h, &k), filter_valid(&xy, w, h, &k));
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / 3.0)
}

/// Confusion counts and ratios with distractor (bit 0) as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    /// No pixel was predicted as distractor; precision is reported as 1.
    pub empty_prediction: bool,
    /// No ground-truth distractor pixel; recall is reported as 1.
    pub empty_ground_truth: bool,
}

/// Pixels where `coverage` is 0 are left out of the tally.
pub fn mask_metrics(pred: &BinaryMask, gt: &BinaryMask, coverage: Option<&BinaryMask>) -> Result<MaskMetrics> {
    check_dims("mask metrics", pred.dims(), gt.dims())?;
    if let Some(c) = coverage {
        check_dims("mask metrics coverage", pred.dims(), c.dims())?;
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..pred.data().len() {
        if coverage.is_some_and(|c| !c.at(i)) {
            continue;
        }
        match (!pred.at(i), !gt.at(i)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(MaskMetrics {
        iou: ratio(tp, tp + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        true_positive: tp,
        false_positive: fp,
        false_negative: fn_,
        true_negative: tn,
        empty_prediction: tp + fp == 0,
        empty_ground_truth: tp + fn_ == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let z = ImageBuffer::filled(4, 4, [0.0; 3]);
        assert_eq!(psnr(&z, &z).unwrap(), Psnr::Infinite);
        let t = ImageBuffer::filled(4, 4, [0.1; 3]);
        assert!((psnr(&z, &t).unwrap().value() - 20.0).abs() < 1e-9);
        let o = ImageBuffer::filled(4, 4, [1.0; 3]);
        assert!(psnr(&z, &o).unwrap().value().abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_constant_negative() {
        let a = ImageBuffer::from_fn(16, 12, |x, y| [x as f64 / 16.0, y as f64 / 12.0, 0.3]);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let half = ImageBuffer::filled(12, 12, [0.5; 3]);
        let neg = ImageBuffer::from_fn(12, 12, |x, y| half.pixel(x, y).map(|c| 1.0 - c));
        assert!((ssim(&half, &neg).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&ImageBuffer::<f64>::filled(10, 20, [0.0; 3]), &ImageBuffer::filled(10, 20, [0.0; 3])).is_err());
    }

    #[test]
    fn mask_hand_case() {
        // Distractor = 0. Two TP, one FP, one FN on a 4x4 grid.
        let gt = BinaryMask::from_fn(4, 4, |x, y| !((x, y) == (0, 0) || (x, y) == (1, 0) || (x, y) == (2, 0)));
        let pred = BinaryMask::from_fn(4, 4, |x, y| !((x, y) == (0, 0) || (x, y) == (1, 0) || (x, y) == (3, 3)));
        let m = mask_metrics(&pred, &gt, None).unwrap();
        assert!((m.iou - 0.5).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_is_flagged() {
        let gt = BinaryMask::from_fn(4, 4, |x, _| x > 0);
        let m = mask_metrics(&BinaryMask::ones(4, 4), &gt, None).unwrap();
        assert!(m.empty_prediction);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn coverage_excludes_pixels() {
        let gt = BinaryMask::from_fn(4, 1, |x, _| x != 0);
        let pred = BinaryMask::ones(4, 1);
        let cov = BinaryMask::from_fn(4, 1, |x, _| x != 0);
        let m = mask_metrics(&pred, &gt, Some(&cov)).unwrap();
        assert_eq!(m.false_negative, 0);
        assert!(m.empty_ground_truth);
    }
}
