//! Procedural transient distractors pasted over clean views.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DistractorMode, GeneratorConfig};
use crate::error::{Error, Result};
use crate::scene_model::{BinaryMask, EntityMap, ImageBuffer, SceneDataset};

#[derive(Clone, Debug)]
enum Shape {
    Ellipse {
        rx: f64,
        ry: f64,
        angle: f64,
    },
    /// Star-shaped outline `r(t) = r0 * (1 + sum a_k sin(k t + p_k))`.
    Blob {
        r0: f64,
        harmonics: Vec<(f64, f64)>,
    },
}

#[derive(Clone, Debug)]
struct Sprite {
    center: [f64; 2],
    shape: Shape,
    color: [f64; 3],
    noise_seed: u64,
}

impl Sprite {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        match &self.shape {
            Shape::Ellipse { rx, ry, angle } => {
                let (c, s) = (angle.cos(), angle.sin());
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Blob { r0, harmonics } => {
                let t = dy.atan2(dx);
                let r = r0
                    * (1.0
                        + harmonics
                            .iter()
                            .enumerate()
                            .map(|(k, (a, p))| a * ((k + 2) as f64 * t + p).sin())
                            .sum::<f64>());
                dx * dx + dy * dy <= r * r
            }
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        let shape = match &self.shape {
            Shape::Ellipse { rx, ry, angle } => Shape::Ellipse { rx: rx * factor, ry: ry * factor, angle: *angle },
            Shape::Blob { r0, harmonics } => Shape::Blob { r0: r0 * factor, harmonics: harmonics.clone() },
        };
        Self { shape, ..self.clone() }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn random_sprite(rng: &mut ChaCha8Rng, w: usize, h: usize, size: [f64; 2]) -> Sprite {
    let side = w.min(h) as f64;
    let r = rng.gen_range(size[0]..=size[1]) * side;
    let center = [rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)];
    let shape = if rng.gen_bool(0.5) {
        let aspect = rng.gen_range(0.6..1.0);
        Shape::Ellipse { rx: r, ry: r * aspect, angle: rng.gen_range(0.0..PI) }
    } else {
        let harmonics = (0..3).map(|_| (rng.gen_range(0.0..0.12), rng.gen_range(0.0..2.0 * PI))).collect();
        Shape::Blob { r0: r, harmonics }
    };
    let color = hsv(rng.gen_range(0.0..1.0), rng.gen_range(0.75..1.0), rng.gen_range(0.75..1.0));
    Sprite { center, shape, color, noise_seed: rng.gen() }
}

/// Pixel footprint of a sprite.
fn footprint(s: &Sprite, w: usize, h: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if s.contains(x as f64 + 0.5, y as f64 + 0.5) {
                out.push(y * w + x);
            }
        }
    }
    out
}

/// Sprites for one placement group, either a fixed count or grown until the
/// covered fraction is within 2% of the target.
fn place_sprites(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<(Sprite, Vec<usize>)> {
    let (w, h) = (cfg.width, cfg.height);
    let d = &cfg.distractors;
    let mut out = Vec::new();
    let Some(target) = d.coverage else {
        for _ in 0..d.sprites_per_view {
            let s = random_sprite(rng, w, h, d.size_range);
            let fp = footprint(&s, w, h);
            out.push((s, fp));
        }
        return out;
    };
    let total = (w * h) as f64;
    let mut covered = vec![false; w * h];
    let mut count = 0usize;
    for _ in 0..400 {
        if count as f64 / total >= target - 0.02 {
            break;
        }
        let mut s = random_sprite(rng, w, h, d.size_range);
        for _ in 0..8 {
            let fp = footprint(&s, w, h);
            let added = fp.iter().filter(|i| !covered[**i]).count();
            let frac = (count + added) as f64 / total;
            if added > 0 && frac <= target + 0.02 {
                for i in &fp {
                    covered[*i] = true;
                }
                count += added;
                out.push((s, fp));
                break;
            }
            s = s.scaled(0.75);
        }
    }
    out
}

/// Pastes sprites into the views selected by `cfg.distractors`. Each sprite
/// is one new entity; masks mark sprite pixels 0. Clean plates are kept.
pub fn composite_distractors(clean: &SceneDataset<f64>, cfg: &GeneratorConfig) -> Result<SceneDataset<f64>> {
    cfg.validate()?;
    let n = clean.len();
    let (w, h) = (cfg.width, cfg.height);
    if clean.cameras.iter().any(|c| c.dims() != (w, h)) {
        return Err(Error::Config("generator resolution does not match the dataset".into()));
    }
    let mut out = clean.clone();
    let entities = clean
        .entities
        .clone()
        .unwrap_or_else(|| vec![EntityMap::new(w, h, vec![0; w * h]).expect("all-zero map is valid"); n]);
    let mut masks = clean.distractor_masks.clone().unwrap_or_else(|| vec![BinaryMask::ones(w, h); n]);
    let mut new_entities = entities.clone();
    out.clean_images = Some(clean.clean_images.clone().unwrap_or_else(|| clean.images.clone()));
    let views: Vec<usize> = cfg.distractors.views.clone().unwrap_or_else(|| (0..n).collect());
    let group_of = |v: usize| match cfg.distractors.mode {
        DistractorMode::Transient => v,
        DistractorMode::SemiStatic { persist } => v / persist,
    };
    for v in views {
        if v >= n {
            return Err(Error::Config(format!("distractor view {v} out of range")));
        }
        let stream = 0x5eed_0000_u64 + group_of(v) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let sprites = place_sprites(cfg, &mut rng);
        let mut data = out.images[v].data().to_vec();
        let mut ids = entities[v].data().to_vec();
        let mut bits = masks[v].data().to_vec();
        let base = entities[v].max_id();
        for (k, (s, fp)) in sprites.iter().enumerate() {
            let mut noise = ChaCha8Rng::seed_from_u64(s.noise_seed);
            for i in fp {
                let jitter: f64 = noise.gen_range(-0.08..0.08);
                for c in 0..3 {
                    data[i * 3 + c] = (s.color[c] + jitter).clamp(0.0, 1.0);
                }
                ids[*i] = base + 1 + k as u32;
                bits[*i] = false;
            }
        }
        out.images[v] = ImageBuffer::new(w, h, data)?;
        new_entities[v] = EntityMap::compacted(w, h, ids)?;
        masks[v] = BinaryMask::new(w, h, bits)?;
    }
    out.entities = Some(new_entities);
    out.distractor_masks = Some(masks);
    Ok(out)
}

/// Fraction of pixels marked as distractor.
pub fn distractor_fraction(mask: &BinaryMask) -> f64 {
    mask.count_zeros() as f64 / (mask.width() * mask.height()) as f64
}
