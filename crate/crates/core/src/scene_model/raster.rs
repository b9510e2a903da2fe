//! Row-major raster grids: RGB images, depth maps, binary masks and entity maps.

use crate::error::{Error, Result};
use crate::real::Real;

fn check_len(context: &'static str, width: usize, height: usize, per: usize, found: usize) -> Result<()> {
    let expected = width * height * per;
    if expected != found {
        return Err(Error::BufferLength { context, expected, found });
    }
    Ok(())
}

/// RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<T: Real> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_len("image", width, height, 3, data.len())?;
        if let Some(bad) = data.iter().find(|c| !(c.is_finite() && **c >= T::zero() && **c <= T::one())) {
            return Err(Error::InvalidInput(format!("image channel {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Clamps every channel into `[0, 1]` (non-finite values become 0).
    pub fn from_vec_clamped(width: usize, height: usize, mut data: Vec<T>) -> Result<Self> {
        check_len("image", width, height, 3, data.len())?;
        for c in &mut data {
            *c = if c.is_finite() { c.max(T::zero()).min(T::one()) } else { T::zero() };
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let rgb = rgb.map(|c| c.max(T::zero()).min(T::one()));
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|c| if c.is_finite() { c.max(T::zero()).min(T::one()) } else { T::zero() }));
            }
        }
        Self { width, height, data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn pixel_at(&self, index: usize) -> [T; 3] {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Per-pixel channel-mean squared difference.
    pub fn squared_residual(&self, other: &Self) -> Result<Vec<T>> {
        crate::error::check_dims("squared residual", self.dims(), other.dims())?;
        let third = T::lit(1.0 / 3.0);
        Ok(self
            .data
            .chunks_exact(3)
            .zip(other.data.chunks_exact(3))
            .map(|(a, b)| {
                let d0 = a[0] - b[0];
                let d1 = a[1] - b[1];
                let d2 = a[2] - b[2];
                (d0 * d0 + d1 * d1 + d2 * d2) * third
            })
            .collect())
    }

    /// Area-average resampling by `scale` (`scale <= 1` shrinks).
    pub fn resample_area(&self, scale: f64) -> Result<Self> {
        let (w, h, data) = area_resample(self.width, self.height, 3, &self.data, scale, |_| true)?;
        Self::from_vec_clamped(w, h, data)
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// Camera-frame z-depth per pixel; `0` marks "no surface".
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T: Real> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> DepthMap<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_len("depth map", width, height, 1, data.len())?;
        if let Some(bad) = data.iter().find(|d| !(d.is_finite() && **d >= T::zero())) {
            return Err(Error::InvalidInput(format!("depth value {bad} is not finite and >= 0")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, depth: T) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > T::zero()).count()
    }

    /// Area-average resampling that only averages valid (nonzero) samples.
    pub fn resample_area(&self, scale: f64) -> Result<Self> {
        let (w, h, data) = area_resample(self.width, self.height, 1, &self.data, scale, |d| d > T::zero())?;
        Self::new(w, h, data)
    }
}

/// Per-pixel {0,1} mask. 1 = static/keep, 0 = distractor/exclude.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_len("mask", width, height, 1, data.len())?;
        Ok(Self { width, height, data })
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![true; width * height] }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, index: usize) -> bool {
        self.data[index]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.data.len() - self.count_ones()
    }

    pub fn not(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|b| !b).collect() }
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with("mask and", other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with("mask or", other, |a, b| a || b)
    }

    fn zip_with(&self, context: &'static str, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        crate::error::check_dims(context, self.dims(), other.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// `true` when every 1-bit of `other` is also set here.
    pub fn covers(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(a, b)| *a || !*b)
    }

    /// Nearest-neighbour resampling to `width x height`.
    pub fn resample_nearest(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            let (sx, sy) = nearest_source(x, y, width, height, self.width, self.height);
            self.get(sx, sy)
        })
    }
}

/// Per-pixel integer entity IDs; 0 = unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl EntityMap {
    /// Validates that the nonzero IDs are exactly `1..=E` for some `E`.
    pub fn new(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        check_len("entity map", width, height, 1, data.len())?;
        let map = Self { width, height, data };
        if !map.is_contiguous() {
            return Err(Error::InvalidInput("entity IDs must form a contiguous set starting at 1".into()));
        }
        Ok(map)
    }

    /// Relabels arbitrary IDs to a contiguous `1..=E` range, preserving order
    /// of the original IDs and keeping 0 as unlabeled.
    pub fn compacted(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        check_len("entity map", width, height, 1, data.len())?;
        let mut ids: Vec<u32> = data.iter().copied().filter(|i| *i != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        let relabel: std::collections::HashMap<u32, u32> =
            ids.iter().enumerate().map(|(i, id)| (*id, i as u32 + 1)).collect();
        let data = data.iter().map(|i| if *i == 0 { 0 } else { relabel[i] }).collect();
        Ok(Self { width, height, data })
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

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn max_id(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct nonzero IDs.
    pub fn entity_count(&self) -> usize {
        let mut seen = vec![false; self.max_id() as usize + 1];
        for id in &self.data {
            seen[*id as usize] = true;
        }
        seen.iter().skip(1).filter(|s| **s).count()
    }

    pub fn is_contiguous(&self) -> bool {
        self.entity_count() == self.max_id() as usize
    }

    pub fn resample_nearest(&self, width: usize, height: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = nearest_source(x, y, width, height, self.width, self.height);
                data.push(self.get(sx, sy));
            }
        }
        Self::compacted(width, height, data)
    }
}

fn nearest_source(x: usize, y: usize, w: usize, h: usize, sw: usize, sh: usize) -> (usize, usize) {
    let sx = (((x as f64 + 0.5) * sw as f64 / w as f64).floor() as usize).min(sw - 1);
    let sy = (((y as f64 + 0.5) * sh as f64 / h as f64).floor() as usize).min(sh - 1);
    (sx, sy)
}

/// Box-filter resampling with exact fractional overlaps. Samples for which
/// `valid` is false are excluded from the average; output is 0 when no valid
/// sample overlaps a destination pixel.
fn area_resample<T: Real>(
    width: usize,
    height: usize,
    channels: usize,
    data: &[T],
    scale: f64,
    valid: impl Fn(T) -> bool,
) -> Result<(usize, usize, Vec<T>)> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidInput(format!("area resampling scale must be in (0, 1], got {scale}")));
    }
    let dw = ((width as f64 * scale).round() as usize).max(1);
    let dh = ((height as f64 * scale).round() as usize).max(1);
    let sx = width as f64 / dw as f64;
    let sy = height as f64 / dh as f64;
    let spans = |d: usize, step: f64, limit: usize| -> Vec<(usize, f64)> {
        let lo = d as f64 * step;
        let hi = ((d + 1) as f64 * step).min(limit as f64);
        let mut out = Vec::new();
        let mut s = lo.floor() as usize;
        while (s as f64) < hi && s < limit {
            let a = (s as f64).max(lo);
            let b = ((s + 1) as f64).min(hi);
            if b > a {
                out.push((s, b - a));
            }
            s += 1;
        }
        out
    };
    let xs: Vec<_> = (0..dw).map(|x| spans(x, sx, width)).collect();
    let ys: Vec<_> = (0..dh).map(|y| spans(y, sy, height)).collect();
    let mut out = vec![T::zero(); dw * dh * channels];
    for (dy, yspan) in ys.iter().enumerate() {
        for (dx, xspan) in xs.iter().enumerate() {
            for c in 0..channels {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for &(py, wy) in yspan {
                    for &(px, wx) in xspan {
                        let v = data[(py * width + px) * channels + c];
                        if valid(v) {
                            acc += v.as_f64() * wx * wy;
                            wsum += wx * wy;
                        }
                    }
                }
                if wsum > 0.0 {
                    out[(dy * dw + dx) * channels + c] = T::lit(acc / wsum);
                }
            }
        }
    }
    Ok((dw, dh, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(ImageBuffer::<f64>::new(2, 2, vec![0.0; 11]).is_err());
        assert!(DepthMap::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 5]).is_err());
        assert!(EntityMap::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageBuffer::<f64>::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(DepthMap::<f64>::new(1, 1, vec![-1.0]).is_err());
        assert!(DepthMap::<f64>::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn entity_contiguity() {
        assert!(EntityMap::new(2, 1, vec![0, 2]).is_err());
        let m = EntityMap::compacted(3, 1, vec![7, 0, 3]).unwrap();
        assert_eq!(m.data(), &[2, 0, 1]);
        assert!(m.is_contiguous());
    }

    #[test]
    fn half_area_average() {
        let img = ImageBuffer::<f64>::from_fn(4, 2, |x, _| {
            let v = x as f64 / 4.0;
            [v, v, v]
        });
        let half = img.resample_area(0.5).unwrap();
        assert_eq!(half.dims(), (2, 1));
        assert!((half.pixel(0, 0)[0] - 0.125).abs() < 1e-12);
        assert!((half.pixel(1, 0)[0] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn depth_average_ignores_sentinel() {
        let d = DepthMap::new(2, 2, vec![2.0, 0.0, 4.0, 0.0]).unwrap();
        let h = d.resample_area(0.5).unwrap();
        assert_eq!(h.data(), &[3.0]);
    }

    #[test]
    fn mask_algebra() {
        let a = BinaryMask::new(2, 1, vec![true, false]).unwrap();
        let b = BinaryMask::new(2, 1, vec![false, false]).unwrap();
        assert_eq!(a.or(&b).unwrap(), a);
        assert_eq!(a.and(&b).unwrap(), b);
        assert!(a.covers(&b));
        assert!(!b.covers(&a));
        assert_eq!(a.not().data(), &[false, true]);
    }
}
