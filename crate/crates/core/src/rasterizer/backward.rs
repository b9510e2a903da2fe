//! Gradients of a per-pixel weighted squared error with respect to primitive
//! colors and opacities. Positions, scales, rotations and the depth order are
//! held fixed.

use rayon::prelude::*;

use super::render::{prepare, splat_alpha, RenderOptions, TILE_SIZE, TRANSMITTANCE_MIN};
use super::GaussianScene;
use crate::error::{check_dims, Error, Result};
use crate::real::Real;
use crate::scene_model::{Camera, ImageBuffer};

#[derive(Clone, Debug, PartialEq)]
pub struct ColorOpacityGrad<T: Real> {
    pub color: Vec<[T; 3]>,
    pub opacity: Vec<T>,
}

impl<T: Real> ColorOpacityGrad<T> {
    pub fn zeros(n: usize) -> Self {
        Self { color: vec![[T::zero(); 3]; n], opacity: vec![T::zero(); n] }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
        for (a, b) in self.opacity.iter_mut().zip(&other.opacity) {
            *a += *b;
        }
    }
}

struct Contribution<T> {
    list_pos: usize,
    alpha: T,
    falloff: T,
    clamped: bool,
    transmittance: T,
}

/// Returns `sum_p weight[p] * mean_c (render[p,c] - target[p,c])^2` and its
/// gradient. Tiles whose weights are all zero are skipped.
pub fn weighted_mse_grad<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    target: &ImageBuffer<T>,
    weights: &[T],
    opts: &RenderOptions,
) -> Result<(T, ColorOpacityGrad<T>)> {
    check_dims("weighted mse target", cam.dims(), target.dims())?;
    if weights.len() != target.width() * target.height() {
        return Err(Error::BufferLength {
            context: "weighted mse weights",
            expected: target.width() * target.height(),
            found: weights.len(),
        });
    }
    let n = scene.len();
    if n == 0 || weights.iter().all(|w| *w == T::zero()) {
        return Ok((T::zero(), ColorOpacityGrad::zeros(n)));
    }
    let view = prepare(scene, cam, opts);
    let (w, h) = (view.width, view.height);
    let third = T::lit(1.0 / 3.0);
    let two_thirds = T::lit(2.0 / 3.0);
    let t_min = T::lit(TRANSMITTANCE_MIN);

    type TileGrad<T> = (T, Vec<([T; 3], T)>);
    let per_tile: Vec<Option<TileGrad<T>>> = (0..view.tiles.len())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % view.tiles_x, t / view.tiles_x);
            let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h);
            let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w);
            let any = ys.clone().any(|y| xs.clone().any(|x| weights[y * w + x] != T::zero()));
            if !any {
                return None;
            }
            let list = &view.tiles[t];
            let mut local = vec![([T::zero(); 3], T::zero()); list.len()];
            let mut loss = T::zero();
            let mut contribs: Vec<Contribution<T>> = Vec::new();
            for y in ys.clone() {
                for x in xs.clone() {
                    let wp = weights[y * w + x];
                    if wp == T::zero() {
                        continue;
                    }
                    let (px, py) = Camera::<T>::pixel_center(x, y);
                    contribs.clear();
                    let mut transmittance = T::one();
                    let mut color = [T::zero(); 3];
                    for (pos, k) in list.iter().enumerate() {
                        let s = &view.splats[*k as usize];
                        let Some((alpha, falloff, clamped)) = splat_alpha(s, px, py) else {
                            continue;
                        };
                        let next = transmittance * (T::one() - alpha);
                        if next < t_min {
                            break;
                        }
                        for c in 0..3 {
                            color[c] += s.color[c] * alpha * transmittance;
                        }
                        contribs.push(Contribution { list_pos: pos, alpha, falloff, clamped, transmittance });
                        transmittance = next;
                    }
                    let target_px = target.pixel(x, y);
                    let mut d_color = [T::zero(); 3];
                    let mut sq = T::zero();
                    for c in 0..3 {
                        let r = color[c] - target_px[c];
                        sq += r * r;
                        d_color[c] = wp * two_thirds * r;
                    }
                    loss += wp * sq * third;
                    // Back-to-front: `behind` accumulates sum_{k>m} c_k alpha_k T_k.
                    let mut behind = [T::zero(); 3];
                    for ct in contribs.iter().rev() {
                        let s = &view.splats[list[ct.list_pos] as usize];
                        let wgt = ct.alpha * ct.transmittance;
                        let entry = &mut local[ct.list_pos];
                        let mut d_alpha = T::zero();
                        for c in 0..3 {
                            entry.0[c] += wgt * d_color[c];
                            let dc_da = s.color[c] * ct.transmittance - behind[c] / (T::one() - ct.alpha);
                            d_alpha += d_color[c] * dc_da;
                            behind[c] += s.color[c] * wgt;
                        }
                        if !ct.clamped {
                            entry.1 += d_alpha * ct.falloff;
                        }
                    }
                }
            }
            Some((loss, local))
        })
        .collect();

    let mut grad = ColorOpacityGrad::zeros(n);
    let mut loss = T::zero();
    for (t, tile) in per_tile.into_iter().enumerate() {
        let Some((l, local)) = tile else { continue };
        loss += l;
        for (pos, (gc, go)) in local.into_iter().enumerate() {
            let src = view.splats[view.tiles[t][pos] as usize].source as usize;
            for c in 0..3 {
                grad.color[src][c] += gc[c];
            }
            grad.opacity[src] += go;
        }
    }
    Ok((loss, grad))
}
