//! Static scene content: a textured backdrop, tilted cards and spherical
//! blobs made of flat or isotropic primitives.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::GeneratorConfig;
use crate::error::{Error, Result};
use crate::rasterizer::{render_dominant, render_with, DepthMode, GaussianPrimitive, GaussianScene, RenderOptions};
use crate::scene_model::{Camera, EntityMap, SceneDataset};

/// Sum of a few low-frequency sinusoids around a base color.
struct Texture {
    base: [f64; 3],
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, palette: &[[f64; 3]], amplitude: f64) -> Self {
        let base = palette[rng.gen_range(0..palette.len())];
        let waves = (0..3)
            .map(|_| {
                let angle = rng.gen_range(0.0..PI);
                let freq = rng.gen_range(0.6..2.2) * 2.0 * PI;
                let phase = rng.gen_range(0.0..2.0 * PI);
                let gains = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0) * amplitude / 3.0);
                ([angle.cos() * freq, angle.sin() * freq], phase, gains)
            })
            .collect();
        Self { base, waves }
    }

    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        let mut c = self.base;
        for (k, phase, gains) in &self.waves {
            let s = (k[0] * u + k[1] * v + phase).sin();
            for ch in 0..3 {
                c[ch] += gains[ch] * s;
            }
        }
        c.map(|x| x.clamp(0.02, 0.98))
    }
}

pub(crate) fn arc_cameras(cfg: &GeneratorConfig) -> Result<Vec<Camera<f64>>> {
    let a = &cfg.arc;
    let target = Vector3::from(a.target);
    let f = a.focal_factor * cfg.width as f64;
    let (cx, cy) = (cfg.width as f64 / 2.0, cfg.height as f64 / 2.0);
    let span = a.span_degrees.to_radians();
    (0..cfg.views)
        .map(|i| {
            let theta = -span / 2.0 + span * i as f64 / (cfg.views - 1) as f64;
            let eye = target + Vector3::new(a.radius * theta.sin(), -a.height, -a.radius * theta.cos());
            Camera::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0), f, f, cx, cy, cfg.width, cfg.height)
        })
        .collect()
}

fn flat(position: Vector3<f64>, s: f64, rotation: [f64; 4], color: [f64; 3]) -> Result<GaussianPrimitive<f64>> {
    GaussianPrimitive::new(position, 1.0, Vector3::new(0.7 * s, 0.7 * s, 0.05 * s), rotation, color)
}

/// Ground-truth primitives and the object index of each, from the camera
/// set only (content does not depend on image contents).
pub(crate) fn build_content(cfg: &GeneratorConfig, cameras: &[Camera<f64>]) -> Result<(GaussianScene<f64>, Vec<u32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = &cfg.content;
    let target = Vector3::from(cfg.arc.target);
    let z_back = target.z + c.backdrop_distance;
    let f = cfg.arc.focal_factor * cfg.width as f64;
    let s = c.spacing_px * (cfg.arc.radius + c.backdrop_distance) / f;
    let mut prims = Vec::new();
    let mut owner = Vec::new();

    // Backdrop: bounding box of every frustum's footprint on the plane.
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for cam in cameras {
        let eye = cam.center();
        for (u, v) in [
            (0.0, 0.0),
            (cam.width() as f64, 0.0),
            (0.0, cam.height() as f64),
            (cam.width() as f64, cam.height() as f64),
        ] {
            let p = cam.unproject_pixel(u, v, 1.0)?;
            let d = p - eye;
            if d.z <= 1e-9 {
                return Err(Error::Config("a camera does not face the backdrop".into()));
            }
            let hit = eye + d * ((z_back - eye.z) / d.z);
            x0 = x0.min(hit.x);
            x1 = x1.max(hit.x);
            y0 = y0.min(hit.y);
            y1 = y1.max(hit.y);
        }
    }
    let margin = 3.0 * s;
    let tex = Texture::random(&mut rng, &c.palette, c.texture_amplitude);
    let identity = [1.0, 0.0, 0.0, 0.0];
    let (nx, ny) = (((x1 - x0 + 2.0 * margin) / s).ceil() as usize, ((y1 - y0 + 2.0 * margin) / s).ceil() as usize);
    for j in 0..=ny {
        for i in 0..=nx {
            let (x, y) = (x0 - margin + i as f64 * s, y0 - margin + j as f64 * s);
            prims.push(flat(Vector3::new(x, y, z_back), s, identity, tex.at(x, y))?);
            owner.push(0);
        }
    }

    let mut object = 1;
    for _ in 0..c.cards {
        let center =
            target + Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.6..0.6), rng.gen_range(-0.5..0.9));
        let (w, h) = (rng.gen_range(0.5..1.1), rng.gen_range(0.4..0.9));
        let yaw: f64 = rng.gen_range(-0.5..0.5);
        let q = [(yaw / 2.0).cos(), 0.0, (yaw / 2.0).sin(), 0.0];
        let (ax, az) = (yaw.cos(), -yaw.sin());
        let tex = Texture::random(&mut rng, &c.palette, c.texture_amplitude);
        let (nu, nv) = ((w / s).ceil() as usize, (h / s).ceil() as usize);
        for j in 0..=nv {
            for i in 0..=nu {
                let (u, v) = (-w / 2.0 + i as f64 * w / nu as f64, -h / 2.0 + j as f64 * h / nv as f64);
                let p = center + Vector3::new(ax * u, v, az * u);
                prims.push(flat(p, s, q, tex.at(u, v))?);
                owner.push(object);
            }
        }
        object += 1;
    }
    for _ in 0..c.blobs {
        let center =
            target + Vector3::new(rng.gen_range(-1.2..1.2), rng.gen_range(-0.5..0.7), rng.gen_range(-1.0..0.2));
        let r: f64 = rng.gen_range(0.2..0.35);
        let tex = Texture::random(&mut rng, &c.palette, c.texture_amplitude);
        let n = ((4.0 * PI * r * r) / (s * s)).ceil() as usize;
        let golden = PI * (3.0 - 5f64.sqrt());
        for k in 0..n {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let rad = (1.0 - y * y).sqrt();
            let phi = golden * k as f64;
            let d = Vector3::new(rad * phi.cos(), y, rad * phi.sin());
            prims.push(GaussianPrimitive::isotropic(center + d * r, 0.6 * s, 1.0, tex.at(d.x * r, d.y * r + d.z * r))?);
            owner.push(object);
        }
        object += 1;
    }
    Ok((GaussianScene::new(prims)?, owner))
}

pub(crate) fn gt_render_options() -> RenderOptions {
    RenderOptions { depth_mode: DepthMode::FirstSurface, ..RenderOptions::default() }
}

/// Entity IDs from the dominant primitive's object, 1-based; 0 where
/// nothing renders.
pub(crate) fn object_entities(scene: &GaussianScene<f64>, owner: &[u32], cam: &Camera<f64>) -> Result<Vec<u32>> {
    let dom = render_dominant(scene, cam, &gt_render_options())?;
    Ok(dom.into_iter().map(|d| d.map_or(0, |k| owner[k as usize] + 1)).collect())
}

/// Clean dataset and ground-truth primitives for `cfg`. Images are renders
/// of the primitives; depth is first-surface depth.
pub fn generate_scene(cfg: &GeneratorConfig) -> Result<(SceneDataset<f64>, GaussianScene<f64>)> {
    cfg.validate()?;
    let cameras = arc_cameras(cfg)?;
    let (scene, owner) = build_content(cfg, &cameras)?;
    let opts = gt_render_options();
    let mut images = Vec::with_capacity(cameras.len());
    let mut depths = Vec::with_capacity(cameras.len());
    let mut entities = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let r = render_with(&scene, cam, &opts)?;
        images.push(r.color);
        depths.push(r.depth);
        entities.push(EntityMap::compacted(cfg.width, cfg.height, object_entities(&scene, &owner, cam)?)?);
    }
    let mut ds = SceneDataset::new(format!("synthetic-{}", cfg.seed), cameras, images.clone())?;
    ds.depths = Some(depths);
    ds.entities = Some(entities);
    ds.distractor_masks = Some(vec![crate::scene_model::BinaryMask::ones(cfg.width, cfg.height); cfg.views]);
    ds.clean_images = Some(images);
    Ok((ds, scene))
}
