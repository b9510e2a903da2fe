//! Fixtures shared by the integration tests, including an independent
//! per-pixel compositing oracle.
#![allow(dead_code)]

use dfgs::rasterizer::{GaussianPrimitive, GaussianScene, Provenance};
use dfgs::scene_model::{BinaryMask, Camera, DepthMap};
use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Camera at `(0, 0, -4)` looking at the origin, image `y` pointing down.
pub fn front_camera(w: usize, h: usize) -> Camera<f64> {
    Camera::look_at(
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        w as f64,
        w as f64,
        w as f64 / 2.0,
        h as f64 / 2.0,
        w,
        h,
    )
    .unwrap()
}

/// Same intrinsics as [`front_camera`], eye moved to `(x, 0, -4)`.
pub fn shifted_camera(w: usize, h: usize, x: f64) -> Camera<f64> {
    Camera::look_at(
        Vector3::new(x, 0.0, -4.0),
        Vector3::new(x, 0.0, 0.0),
        Vector3::new(0.0, -1.0, 0.0),
        w as f64,
        w as f64,
        w as f64 / 2.0,
        h as f64 / 2.0,
        w,
        h,
    )
    .unwrap()
}

pub fn random_unit_quaternion(r: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 {
            return q.map(|v| v / n);
        }
    }
}

/// Anisotropic primitives in front of [`front_camera`].
pub fn random_scene(r: &mut ChaCha8Rng, n: usize) -> GaussianScene<f64> {
    let prims = (0..n)
        .map(|i| {
            let p = Vector3::new(r.gen_range(-1.2..1.2), r.gen_range(-1.2..1.2), r.gen_range(-1.0..1.5));
            let s = Vector3::new(r.gen_range(0.04..0.35), r.gen_range(0.04..0.35), r.gen_range(0.04..0.35));
            let q = random_unit_quaternion(r);
            let o = r.gen_range(0.05..0.95);
            let c = [r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)];
            GaussianPrimitive::new(p, o, s, q, c).unwrap().with_provenance(Provenance { reference: 0, pixel: i as u32 })
        })
        .collect();
    GaussianScene::new(prims).unwrap()
}

fn rotation(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Direct front-to-back compositing: every primitive evaluated at every
/// pixel center, sorted by view depth. Returns RGB per pixel.
pub fn oracle_render(scene: &GaussianScene<f64>, cam: &Camera<f64>) -> Vec<[f64; 3]> {
    struct S {
        depth: f64,
        idx: usize,
        mean: [f64; 2],
        inv: [f64; 3],
        o: f64,
        c: [f64; 3],
    }
    let mut splats = Vec::new();
    for (idx, g) in scene.primitives().iter().enumerate() {
        let t = cam.rotation() * g.position() + cam.translation();
        if t.z <= 0.01 {
            continue;
        }
        let r = rotation(g.rotation());
        let s = Matrix3::from_diagonal(g.scale());
        let sigma = r * s * s * r.transpose();
        let j = Matrix2x3::new(
            cam.fx() / t.z,
            0.0,
            -cam.fx() * t.x / (t.z * t.z),
            0.0,
            cam.fy() / t.z,
            -cam.fy() * t.y / (t.z * t.z),
        );
        let m = j * cam.rotation();
        let cov = m * sigma * m.transpose();
        let (a, b, c) = (cov[(0, 0)] + 0.3, cov[(0, 1)], cov[(1, 1)] + 0.3);
        let det = a * c - b * b;
        splats.push(S {
            depth: t.z,
            idx,
            mean: [cam.fx() * t.x / t.z + cam.cx(), cam.fy() * t.y / t.z + cam.cy()],
            inv: [c / det, -b / det, a / det],
            o: g.opacity(),
            c: g.color(),
        });
    }
    splats.sort_by(|p, q| p.depth.total_cmp(&q.depth).then(p.idx.cmp(&q.idx)));
    let (w, h) = cam.dims();
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut tr = 1.0;
            let mut col = [0.0; 3];
            for s in &splats {
                let (dx, dy) = (px - s.mean[0], py - s.mean[1]);
                let q = s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy;
                let alpha = (s.o * (-0.5 * q).exp()).min(0.999);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                let next = tr * (1.0 - alpha);
                if next < 1e-4 {
                    break;
                }
                for k in 0..3 {
                    col[k] += s.c[k] * alpha * tr;
                }
                tr = next;
            }
            out[y * w + x] = col.map(|v: f64| v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Scene with colors and opacities away from the [0, 1] bounds so that
/// finite differences never hit the clamps.
pub fn fd_scene(r: &mut ChaCha8Rng, n: usize) -> GaussianScene<f64> {
    let prims = (0..n)
        .map(|_| {
            let p = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-0.5..1.0));
            let s = Vector3::new(r.gen_range(0.1..0.4), r.gen_range(0.1..0.4), r.gen_range(0.1..0.4));
            let q = random_unit_quaternion(r);
            let c = [r.gen_range(0.1..0.9), r.gen_range(0.1..0.9), r.gen_range(0.1..0.9)];
            GaussianPrimitive::new(p, r.gen_range(0.1..0.7), s, q, c).unwrap()
        })
        .collect();
    GaussianScene::new(prims).unwrap()
}

#[derive(Debug, Default)]
pub struct GradientCheck {
    pub checked: usize,
    /// Within tolerance of the central difference at `h`.
    pub agreeing: usize,
    /// The `[-h, h]` window straddles a jump of the loss (alpha cutoff or
    /// transmittance stop): the difference at `h` disagrees with the one at
    /// `h / 10`, and the analytic value agrees with the latter.
    pub discontinuities: usize,
    pub failures: Vec<String>,
    pub worst_relative: f64,
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    let scale = a.abs().max(f.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (a - f).abs() / scale
    }
}

/// Analytic color/opacity gradients of the weighted loss against central
/// differences on `scenes` random scenes of up to `max_prims` primitives.
pub fn gradient_check(scenes: u64, max_prims: usize, h: f64, tol: f64) -> GradientCheck {
    use dfgs::rasterizer::{weighted_mse_grad, RenderOptions};
    use dfgs::scene_model::ImageBuffer;
    let opts = RenderOptions::default();
    let cam = front_camera(24, 24);
    let mut out = GradientCheck::default();
    for seed in 0..scenes {
        let mut r = rng(100 + seed);
        let n = r.gen_range(1..=max_prims);
        let scene = fd_scene(&mut r, n);
        let target = ImageBuffer::from_fn(24, 24, |_, _| [r.gen(), r.gen(), r.gen()]);
        let weights: Vec<f64> = (0..24 * 24).map(|_| if r.gen_bool(0.8) { 1.0 } else { 0.0 }).collect();
        let loss = |s: &GaussianScene<f64>| weighted_mse_grad(s, &cam, &target, &weights, &opts).unwrap().0;
        let (_, grad) = weighted_mse_grad(&scene, &cam, &target, &weights, &opts).unwrap();
        for i in 0..n {
            for k in 0..4 {
                let bump = |d: f64| {
                    let mut s = scene.clone();
                    let g = &mut s.primitives_mut()[i];
                    if k < 3 {
                        let mut c = g.color();
                        c[k] += d;
                        g.set_color(c);
                    } else {
                        g.set_opacity(g.opacity() + d);
                    }
                    loss(&s)
                };
                let central = |hh: f64| (bump(hh) - bump(-hh)) / (2.0 * hh);
                let an = if k < 3 { grad.color[i][k] } else { grad.opacity[i] };
                let fd = central(h);
                let e = relative_error(an, fd);
                out.checked += 1;
                if e < tol {
                    out.agreeing += 1;
                    out.worst_relative = out.worst_relative.max(e);
                    continue;
                }
                let fine = central(h / 10.0);
                if relative_error(fd, fine) >= tol && relative_error(an, fine) < tol {
                    out.discontinuities += 1;
                } else {
                    out.failures.push(format!("scene {seed} primitive {i} param {k}: analytic {an:e}, fd {fd:e}"));
                }
            }
        }
    }
    out
}

/// Independent count of references that fail to see `p` as static.
pub fn failing_refs(
    p: &Vector3<f64>,
    cams: &[&Camera<f64>],
    masks: &[BinaryMask],
    depths: &[&DepthMap<f64>],
    tol: f64,
) -> usize {
    let mut n = 0;
    for ((c, m), d) in cams.iter().zip(masks).zip(depths) {
        let t = c.rotation() * p + c.translation();
        if t.z <= 0.0 {
            n += 1;
            continue;
        }
        let (u, v) = (c.fx() * t.x / t.z + c.cx(), c.fy() * t.y / t.z + c.cy());
        if u < 0.0 || v < 0.0 || u >= c.width() as f64 || v >= c.height() as f64 {
            n += 1;
            continue;
        }
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        let dz = d.get(x, y);
        if dz > 0.0 && t.z > dz * (1.0 + tol) {
            n += 1;
        } else if !m.get(x, y) {
            n += 1;
        }
    }
    n
}
