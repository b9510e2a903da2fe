//! Sorted front-to-back alpha compositing, tiled and brute-force.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gaussian::{project_gaussian_with, GaussianScene, Splat, SplatProjection, ALPHA_CUTOFF, ALPHA_MAX};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene_model::{Camera, DepthMap, ImageBuffer};

pub const DEFAULT_NEAR: f64 = 0.01;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthMode {
    /// Alpha-weighted mean of primitive depths.
    #[default]
    AlphaWeighted,
    /// Depth of the primitive at which accumulated opacity first reaches 0.5.
    FirstSurface,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub depth_mode: DepthMode,
    pub near: f64,
    /// Pixels with accumulated opacity below this get depth 0.
    pub opacity_floor: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { depth_mode: DepthMode::AlphaWeighted, near: DEFAULT_NEAR, opacity_floor: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderStats {
    pub visible: usize,
    pub culled: usize,
    pub skipped_singular: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T: Real> {
    pub color: ImageBuffer<T>,
    pub depth: DepthMap<T>,
    /// Accumulated opacity per pixel.
    pub alpha: Vec<T>,
    pub stats: RenderStats,
}

/// Projected, depth-sorted splats with per-tile index lists.
pub(crate) struct PreparedView<T: Real> {
    pub splats: Vec<Splat<T>>,
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub width: usize,
    pub height: usize,
    pub stats: RenderStats,
}

fn sort_splats<T: Real>(splats: &mut [Splat<T>]) {
    splats.sort_by(|a, b| a.depth.as_f64().total_cmp(&b.depth.as_f64()).then(a.source.cmp(&b.source)));
}

fn project_all<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    opts: &RenderOptions,
    cull_screen: bool,
) -> (Vec<Splat<T>>, RenderStats) {
    let near = T::lit(opts.near);
    let projected: Vec<SplatProjection<T>> = scene
        .primitives()
        .par_iter()
        .enumerate()
        .map(|(i, g)| project_gaussian_with(g, cam, near, cull_screen, i as u32))
        .collect();
    let mut stats = RenderStats::default();
    let mut splats = Vec::with_capacity(projected.len());
    for p in projected {
        match p {
            SplatProjection::Visible(s) => splats.push(s),
            SplatProjection::Culled => stats.culled += 1,
            SplatProjection::Singular => stats.skipped_singular += 1,
        }
    }
    stats.visible = splats.len();
    sort_splats(&mut splats);
    (splats, stats)
}

fn check_scene<T: Real>(scene: &GaussianScene<T>) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::EmptyScene("cannot render a scene without primitives".into()));
    }
    Ok(())
}

pub(crate) fn prepare<T: Real>(scene: &GaussianScene<T>, cam: &Camera<T>, opts: &RenderOptions) -> PreparedView<T> {
    let (splats, stats) = project_all(scene, cam, opts, true);
    let (width, height) = cam.dims();
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let half = 0.5;
    for (k, s) in splats.iter().enumerate() {
        let (mx, my, r) = (s.mean[0].as_f64(), s.mean[1].as_f64(), s.radius.as_f64());
        // Pixel centers x + 0.5 within [mx - r, mx + r], widened by one pixel.
        let x0 = ((mx - r - half).floor() as i64 - 1).max(0);
        let x1 = ((mx + r - half).ceil() as i64 + 1).min(width as i64 - 1);
        let y0 = ((my - r - half).floor() as i64 - 1).max(0);
        let y1 = ((my + r - half).ceil() as i64 + 1).min(height as i64 - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / TILE_SIZE, x1 as usize / TILE_SIZE);
        let (ty0, ty1) = (y0 as usize / TILE_SIZE, y1 as usize / TILE_SIZE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    PreparedView { splats, tiles, tiles_x, width, height, stats }
}

/// Alpha of splat `s` at pixel center `(px, py)`, or `None` below the cutoff.
/// Also returns the unclamped gaussian falloff and whether the clamp engaged.
#[inline]
pub(crate) fn splat_alpha<T: Real>(s: &Splat<T>, px: T, py: T) -> Option<(T, T, bool)> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let power = -T::lit(0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
    if power > T::zero() {
        return None;
    }
    let falloff = power.exp();
    let raw = s.opacity * falloff;
    let max = T::lit(ALPHA_MAX);
    let (alpha, clamped) = if raw > max { (max, true) } else { (raw, false) };
    if alpha < T::lit(ALPHA_CUTOFF) {
        return None;
    }
    Some((alpha, falloff, clamped))
}

#[derive(Clone, Copy)]
struct PixelResult<T> {
    color: [T; 3],
    alpha: T,
    depth: T,
}

#[inline]
fn composite_pixel<'a, T: Real>(
    splats: impl Iterator<Item = &'a Splat<T>>,
    px: T,
    py: T,
    opts: &RenderOptions,
) -> PixelResult<T> {
    let mut transmittance = T::one();
    let mut color = [T::zero(); 3];
    let mut depth_acc = T::zero();
    let mut surface = None;
    let half = T::lit(0.5);
    let t_min = T::lit(TRANSMITTANCE_MIN);
    for s in splats {
        let Some((alpha, _, _)) = splat_alpha(s, px, py) else {
            continue;
        };
        let next = transmittance * (T::one() - alpha);
        if next < t_min {
            break;
        }
        let w = alpha * transmittance;
        for c in 0..3 {
            color[c] += s.color[c] * w;
        }
        depth_acc += s.depth * w;
        if surface.is_none() && T::one() - next >= half {
            surface = Some(s.depth);
        }
        transmittance = next;
    }
    let alpha = T::one() - transmittance;
    let depth = if alpha < T::lit(opts.opacity_floor) || alpha <= T::zero() {
        T::zero()
    } else {
        match opts.depth_mode {
            DepthMode::AlphaWeighted => depth_acc / alpha,
            DepthMode::FirstSurface => surface.unwrap_or(T::zero()),
        }
    };
    PixelResult { color, alpha, depth }
}

fn assemble<T: Real>(
    width: usize,
    height: usize,
    pixels: impl Iterator<Item = (usize, PixelResult<T>)>,
    stats: RenderStats,
) -> Result<RenderOutput<T>> {
    let mut color = vec![T::zero(); width * height * 3];
    let mut depth = vec![T::zero(); width * height];
    let mut alpha = vec![T::zero(); width * height];
    for (i, p) in pixels {
        color[i * 3..i * 3 + 3].copy_from_slice(&p.color);
        depth[i] = p.depth.max(T::zero());
        alpha[i] = p.alpha.max(T::zero()).min(T::one());
    }
    Ok(RenderOutput {
        color: ImageBuffer::from_vec_clamped(width, height, color)?,
        depth: DepthMap::new(width, height, depth)?,
        alpha,
        stats,
    })
}

pub fn render<T: Real>(scene: &GaussianScene<T>, cam: &Camera<T>) -> Result<RenderOutput<T>> {
    render_with(scene, cam, &RenderOptions::default())
}

/// Tiled renderer; tiles are composited in parallel.
pub fn render_with<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    opts: &RenderOptions,
) -> Result<RenderOutput<T>> {
    check_scene(scene)?;
    let view = prepare(scene, cam, opts);
    let (w, h) = (view.width, view.height);
    let tile_pixels: Vec<Vec<(usize, PixelResult<T>)>> = (0..view.tiles.len())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % view.tiles_x, t / view.tiles_x);
            let list = &view.tiles[t];
            let mut out = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
                for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                    let (px, py) = Camera::<T>::pixel_center(x, y);
                    let it = list.iter().map(|k| &view.splats[*k as usize]);
                    out.push((y * w + x, composite_pixel(it, px, py, opts)));
                }
            }
            out
        })
        .collect();
    assemble(w, h, tile_pixels.into_iter().flatten(), view.stats)
}

pub fn render_bruteforce<T: Real>(scene: &GaussianScene<T>, cam: &Camera<T>) -> Result<RenderOutput<T>> {
    render_bruteforce_with(scene, cam, &RenderOptions::default())
}

/// Reference renderer: every primitive in front of the near plane is
/// evaluated at every pixel, with no screen culling and no tiling.
pub fn render_bruteforce_with<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    opts: &RenderOptions,
) -> Result<RenderOutput<T>> {
    check_scene(scene)?;
    let (splats, stats) = project_all(scene, cam, opts, false);
    let (w, h) = cam.dims();
    let pixels = (0..w * h).map(|i| {
        let (px, py) = Camera::<T>::pixel_center(i % w, i / w);
        (i, composite_pixel(splats.iter(), px, py, opts))
    });
    assemble(w, h, pixels, stats)
}

/// Index of the primitive with the largest blending weight at each pixel.
pub fn render_dominant<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    opts: &RenderOptions,
) -> Result<Vec<Option<u32>>> {
    check_scene(scene)?;
    let view = prepare(scene, cam, opts);
    let (w, h) = (view.width, view.height);
    let t_min = T::lit(TRANSMITTANCE_MIN);
    let tiles: Vec<Vec<(usize, Option<u32>)>> = (0..view.tiles.len())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % view.tiles_x, t / view.tiles_x);
            let mut out = Vec::new();
            for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
                for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                    let (px, py) = Camera::<T>::pixel_center(x, y);
                    let mut transmittance = T::one();
                    let mut best: Option<(T, u32)> = None;
                    for k in &view.tiles[t] {
                        let s = &view.splats[*k as usize];
                        let Some((alpha, _, _)) = splat_alpha(s, px, py) else { continue };
                        let next = transmittance * (T::one() - alpha);
                        if next < t_min {
                            break;
                        }
                        let wgt = alpha * transmittance;
                        if best.is_none_or(|(bw, _)| wgt > bw) {
                            best = Some((wgt, s.source));
                        }
                        transmittance = next;
                    }
                    out.push((y * w + x, best.map(|b| b.1)));
                }
            }
            out
        })
        .collect();
    let mut labels = vec![None; w * h];
    for (i, l) in tiles.into_iter().flatten() {
        labels[i] = l;
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::GaussianPrimitive;
    use nalgebra::{Matrix3, Vector3};

    fn cam(w: usize, h: usize) -> Camera<f64> {
        Camera::from_parts(50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0, w, h, Matrix3::identity(), Vector3::zeros())
            .unwrap()
    }

    /// Primitive whose mean projects exactly onto the center of pixel (x, y).
    fn on_pixel(
        cam: &Camera<f64>,
        x: usize,
        y: usize,
        z: f64,
        opacity: f64,
        color: [f64; 3],
    ) -> GaussianPrimitive<f64> {
        let (u, v) = Camera::<f64>::pixel_center(x, y);
        let p = cam.unproject_pixel(u, v, z).unwrap();
        GaussianPrimitive::isotropic(p, 0.02, opacity, color).unwrap()
    }

    #[test]
    fn single_opaque_primitive() {
        let c = cam(16, 16);
        let scene = GaussianScene::new(vec![on_pixel(&c, 8, 8, 2.0, 1.0, [1.0, 0.0, 0.0])]).unwrap();
        let out = render(&scene, &c).unwrap();
        let px = out.color.pixel(8, 8);
        assert!((px[0] - 0.999).abs() < 1e-12 && px[1] == 0.0 && px[2] == 0.0);
        assert!((out.depth.get(8, 8) - 2.0).abs() < 1e-4);
    }

    #[test]
    fn two_layer_expansion() {
        let c = cam(16, 16);
        let scene = GaussianScene::new(vec![
            on_pixel(&c, 8, 8, 3.0, 0.5, [0.0, 1.0, 0.0]),
            on_pixel(&c, 8, 8, 2.0, 0.5, [1.0, 0.0, 0.0]),
        ])
        .unwrap();
        let px = render(&scene, &c).unwrap().color.pixel(8, 8);
        assert!((px[0] - 0.5).abs() < 1e-12);
        assert!((px[1] - 0.25).abs() < 1e-12);
        assert_eq!(px[2], 0.0);
    }

    #[test]
    fn all_culled_gives_empty_buffers() {
        let c = cam(8, 8);
        let g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, -2.0), 0.1, 0.9, [1.0; 3]).unwrap();
        let out = render(&GaussianScene::new(vec![g]).unwrap(), &c).unwrap();
        assert!(out.color.data().iter().all(|v| *v == 0.0));
        assert!(out.alpha.iter().all(|v| *v == 0.0));
        assert!(out.depth.data().iter().all(|v| *v == 0.0));
        assert_eq!(out.stats.culled, 1);
    }

    #[test]
    fn empty_scene_rejected() {
        assert!(render(&GaussianScene::<f64>::default(), &cam(4, 4)).is_err());
    }

    #[test]
    fn single_primitive_bitwise_equal_to_bruteforce() {
        let c = cam(24, 20);
        let scene = GaussianScene::new(vec![on_pixel(&c, 10, 9, 2.0, 0.8, [0.2, 0.4, 0.9])]).unwrap();
        let a = render(&scene, &c).unwrap();
        let b = render_bruteforce(&scene, &c).unwrap();
        assert_eq!(a.color, b.color);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn first_surface_depth_mode() {
        let c = cam(16, 16);
        let scene =
            GaussianScene::new(vec![on_pixel(&c, 8, 8, 2.0, 0.6, [1.0; 3]), on_pixel(&c, 8, 8, 4.0, 0.9, [1.0; 3])])
                .unwrap();
        let opts = RenderOptions { depth_mode: DepthMode::FirstSurface, ..Default::default() };
        let out = render_with(&scene, &c, &opts).unwrap();
        assert_eq!(out.depth.get(8, 8), 2.0);
        let mean = render(&scene, &c).unwrap().depth.get(8, 8);
        assert!(mean > 2.0 && mean < 4.0);
    }

    #[test]
    fn dominant_labels_pick_front_heavy_primitive() {
        let c = cam(16, 16);
        let scene =
            GaussianScene::new(vec![on_pixel(&c, 8, 8, 3.0, 0.5, [0.0; 3]), on_pixel(&c, 8, 8, 2.0, 0.9, [0.0; 3])])
                .unwrap();
        let labels = render_dominant(&scene, &c, &RenderOptions::default()).unwrap();
        assert_eq!(labels[8 * 16 + 8], Some(1));
        assert_eq!(labels[0], None);
    }
}
