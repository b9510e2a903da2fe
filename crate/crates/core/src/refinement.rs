//! Mask-guided refinement of primitive colors and opacities.
//!
//! The objective for each target view is the masked photometric loss on the
//! target plus `lambda_aux` times the auxiliary loss on the references over
//! regions the target mask excludes. Masks are held fixed between
//! recomputes; geometry and depth order never change.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::mask_cascade::{predict_query_mask_detailed, robust_mask, warp_mask, CascadeView, MaskCascadeConfig};
use crate::rasterizer::{render_with, weighted_mse_grad, ColorOpacityGrad, GaussianScene, RenderOptions};
use crate::real::Real;
use crate::scene_model::{BinaryMask, Camera, DepthMap, ImageBuffer};

/// Which mask weights the target-view loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    /// All ones: the plain photometric objective.
    #[default]
    None,
    /// Residual-voted mask only.
    Robust,
    /// Robust mask filtered by the warped reference masks.
    ReferenceFiltered,
    /// Final cascade mask, with the auxiliary reference loss.
    Cascade,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Steps are applied to the gradient of the per-pixel mean loss
    /// multiplied by the target pixel count, so they do not depend on the
    /// resolution.
    pub color_step: f64,
    pub opacity_step: f64,
    pub lambda_aux: f64,
    pub mask_period: usize,
    pub mask_source: MaskSource,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            color_step: 0.05,
            opacity_step: 0.05,
            lambda_aux: 1.0,
            mask_period: 20,
            mask_source: MaskSource::None,
            divergence_factor: 10.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.color_step >= 0.0 && self.opacity_step >= 0.0) {
            return Err(Error::Config("step sizes must be nonnegative".into()));
        }
        if !(self.lambda_aux >= 0.0) {
            return Err(Error::Config("lambda_aux must be nonnegative".into()));
        }
        if self.mask_period == 0 {
            return Err(Error::Config("mask_period must be at least 1".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub masked: f64,
    pub aux: f64,
}

impl LossRecord {
    pub fn total(&self, lambda_aux: f64) -> f64 {
        self.masked + lambda_aux * self.aux
    }
}

/// Mean over pixels with `M = 1` of the channel-mean squared residual.
/// An all-zero mask gives 0 with a warning.
pub fn masked_query_loss<T: Real>(mask: &BinaryMask, query: &ImageBuffer<T>, rendered: &ImageBuffer<T>) -> Result<T> {
    check_dims("masked loss", mask.dims(), query.dims())?;
    let r = query.squared_residual(rendered)?;
    let count = mask.count_ones();
    if count == 0 {
        log::warn!("masked loss: mask excludes every pixel; loss defined as 0");
        return Ok(T::zero());
    }
    let sum = r.iter().zip(mask.data()).filter(|(_, m)| **m).fold(T::zero(), |acc, (v, _)| acc + *v);
    Ok(sum / T::from_usize_lossy(count))
}

/// One reference as seen by the auxiliary loss.
#[derive(Clone, Copy, Debug)]
pub struct AuxReference<'a, T: Real> {
    pub image: &'a ImageBuffer<T>,
    pub camera: &'a Camera<T>,
    pub rendered: &'a ImageBuffer<T>,
    pub depth: &'a DepthMap<T>,
    pub static_mask: &'a BinaryMask,
}

/// Weight of each reference pixel in the auxiliary loss: `1 - M` warped
/// from the query into the reference, restricted to the reference's static
/// mask, divided by the reference pixel count.
pub fn auxiliary_weights<T: Real>(
    mask: &BinaryMask,
    query_cam: &Camera<T>,
    query_depth: &DepthMap<T>,
    reference: (&Camera<T>, &DepthMap<T>, &BinaryMask),
    z_tolerance: f64,
) -> Result<Vec<T>> {
    let (cam, depth, static_mask) = reference;
    check_dims("auxiliary static mask", cam.dims(), static_mask.dims())?;
    let (warped, _) = warp_mask(&mask.not(), query_depth, query_cam, cam, depth, z_tolerance)?;
    let scale = T::one() / T::from_usize_lossy(cam.width() * cam.height());
    Ok(warped.data().iter().zip(static_mask.data()).map(|(a, b)| if *a && *b { scale } else { T::zero() }).collect())
}

/// Sum over references of the mean weighted residual.
pub fn auxiliary_loss<T: Real>(
    mask: &BinaryMask,
    query_cam: &Camera<T>,
    query_depth: &DepthMap<T>,
    refs: &[AuxReference<'_, T>],
    z_tolerance: f64,
) -> Result<T> {
    let mut total = T::zero();
    for r in refs {
        let w = auxiliary_weights(mask, query_cam, query_depth, (r.camera, r.depth, r.static_mask), z_tolerance)?;
        let res = r.image.squared_residual(r.rendered)?;
        total += w.iter().zip(&res).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
    }
    Ok(total)
}

/// Per-pixel weights for one target view, fixed between mask recomputes.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetWeights<T: Real> {
    pub mask: BinaryMask,
    pub query: Vec<T>,
    /// One entry per reference; empty when the auxiliary term is off.
    pub aux: Vec<Vec<T>>,
}

/// Builds weights for `target` from the current scene.
pub fn target_weights<T: Real>(
    scene: &GaussianScene<T>,
    refs: &[CascadeView<'_, T>],
    target: &CascadeView<'_, T>,
    source: MaskSource,
    cascade: &MaskCascadeConfig,
    opts: &RenderOptions,
) -> Result<TargetWeights<T>> {
    let (w, h) = target.camera.dims();
    let (mask, aux) = match source {
        MaskSource::None => (BinaryMask::ones(w, h), Vec::new()),
        MaskSource::Robust => {
            let r = render_with(scene, target.camera, opts)?;
            (robust_mask(target.image, &r.color, cascade)?, Vec::new())
        }
        MaskSource::ReferenceFiltered => {
            let d = predict_query_mask_detailed(refs, target, scene, cascade, opts)?;
            (d.trace.m_q, Vec::new())
        }
        MaskSource::Cascade => {
            let d = predict_query_mask_detailed(refs, target, scene, cascade, opts)?;
            let m = d.trace.m_final;
            let aux = refs
                .iter()
                .zip(&d.reference_renders)
                .zip(&d.trace.m_ref_entity)
                .map(|((v, r), s)| {
                    auxiliary_weights(
                        &m,
                        target.camera,
                        &d.query_render.depth,
                        (v.camera, &r.depth, s),
                        cascade.z_tolerance,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (m, aux)
        }
    };
    let count = mask.count_ones();
    if count == 0 {
        log::warn!("refinement: target mask excludes every pixel");
    }
    let inv = if count == 0 { T::zero() } else { T::one() / T::from_usize_lossy(count) };
    let query = mask.data().iter().map(|m| if *m { inv } else { T::zero() }).collect();
    Ok(TargetWeights { mask, query, aux })
}

/// Objective value `(masked, aux)` summed over targets and its gradient with
/// respect to `masked + lambda_aux * aux`.
pub fn objective_grad<T: Real>(
    scene: &GaussianScene<T>,
    refs: &[CascadeView<'_, T>],
    targets: &[CascadeView<'_, T>],
    weights: &[TargetWeights<T>],
    lambda_aux: f64,
    opts: &RenderOptions,
) -> Result<(T, T, ColorOpacityGrad<T>)> {
    if targets.len() != weights.len() {
        return Err(Error::BufferLength {
            context: "refinement weights",
            expected: targets.len(),
            found: weights.len(),
        });
    }
    let lambda = T::lit(lambda_aux);
    let mut grad = ColorOpacityGrad::zeros(scene.len());
    let (mut masked, mut aux) = (T::zero(), T::zero());
    for (t, wt) in targets.iter().zip(weights) {
        let (l, g) = weighted_mse_grad(scene, t.camera, t.image, &wt.query, opts)?;
        masked += l;
        grad.add_assign(&g);
        if lambda_aux > 0.0 {
            for (r, w) in refs.iter().zip(&wt.aux) {
                let (l, mut g) = weighted_mse_grad(scene, r.camera, r.image, w, opts)?;
                aux += l;
                g.color.iter_mut().flatten().for_each(|v| *v *= lambda);
                g.opacity.iter_mut().for_each(|v| *v *= lambda);
                grad.add_assign(&g);
            }
        }
    }
    Ok((masked, aux, grad))
}

/// Gradient descent on colors and opacities. Returns the refined scene and
/// the loss history; the last record is evaluated after the final step. If
/// the final objective is worse than the initial one the input scene is
/// returned unchanged.
pub fn refine<T: Real>(
    scene: &GaussianScene<T>,
    refs: &[CascadeView<'_, T>],
    targets: &[CascadeView<'_, T>],
    cascade: &MaskCascadeConfig,
    cfg: &RefineConfig,
    opts: &RenderOptions,
) -> Result<(GaussianScene<T>, Vec<LossRecord>)> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidInput("refinement needs at least one target view".into()));
    }
    let pixels = T::from_usize_lossy(targets[0].camera.width() * targets[0].camera.height());
    let color_step = T::lit(cfg.color_step) * pixels;
    let opacity_step = T::lit(cfg.opacity_step) * pixels;
    let lambda = if cfg.mask_source == MaskSource::Cascade { cfg.lambda_aux } else { 0.0 };
    let mut current = scene.clone();
    let mut weights = Vec::new();
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut initial: Option<f64> = None;
    for it in 0..=cfg.iterations {
        let last = it == cfg.iterations;
        if it % cfg.mask_period == 0 && !last {
            weights = targets
                .iter()
                .map(|t| target_weights(&current, refs, t, cfg.mask_source, cascade, opts))
                .collect::<Result<Vec<_>>>()?;
        }
        let (masked, aux, grad) = objective_grad(&current, refs, targets, &weights, lambda, opts)?;
        let rec = LossRecord { iteration: it, masked: masked.as_f64(), aux: aux.as_f64() };
        let total = rec.total(lambda);
        history.push(rec);
        let init = *initial.get_or_insert(total);
        if !total.is_finite() || (init > 0.0 && total > cfg.divergence_factor * init) {
            return Err(Error::Divergence { iteration: it, loss: total, initial: init });
        }
        if last {
            if total > init {
                log::warn!("refinement ended above its initial loss ({total:.6} > {init:.6}); keeping the input scene");
                return Ok((scene.clone(), history));
            }
            break;
        }
        for (g, (gc, go)) in current.primitives_mut().iter_mut().zip(grad.color.iter().zip(&grad.opacity)) {
            let c = g.color();
            g.set_color([c[0] - color_step * gc[0], c[1] - color_step * gc[1], c[2] - color_step * gc[2]]);
            g.set_opacity(g.opacity() - opacity_step * *go);
        }
    }
    Ok((current, history))
}

/// Writes `iteration,masked_loss,aux_loss` rows.
pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Dataset(format!("{}: {e}", path.display()));
    w.write_record(["iteration", "masked_loss", "aux_loss"]).map_err(io)?;
    for r in history {
        w.write_record([r.iteration.to_string(), format!("{:.9e}", r.masked), format!("{:.9e}", r.aux)]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::GaussianPrimitive;
    use nalgebra::{Matrix3, Vector3};

    fn img(values: &[f64]) -> ImageBuffer<f64> {
        ImageBuffer::new(2, 2, values.iter().flat_map(|v| [*v; 3]).collect()).unwrap()
    }

    #[test]
    fn masked_loss_hand_case() {
        let q = img(&[0.0, 0.0, 0.0, 0.0]);
        let r = img(&[0.1, 0.2, 0.3, 0.4]);
        let all = masked_query_loss(&BinaryMask::ones(2, 2), &q, &r).unwrap();
        assert!((all - (0.01 + 0.04 + 0.09 + 0.16) / 4.0).abs() < 1e-15);
        let m = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let some = masked_query_loss(&m, &q, &r).unwrap();
        assert!((some - (0.01 + 0.09) / 2.0).abs() < 1e-15);
        assert_eq!(masked_query_loss(&BinaryMask::zeros(2, 2), &q, &r).unwrap(), 0.0);
    }

    #[test]
    fn masking_the_only_mismatch_gives_zero() {
        let q = img(&[0.5, 0.5, 0.5, 0.5]);
        let r = img(&[0.5, 0.9, 0.5, 0.5]);
        let m = BinaryMask::new(2, 2, vec![true, false, true, true]).unwrap();
        assert_eq!(masked_query_loss(&m, &q, &r).unwrap(), 0.0);
    }

    fn cam() -> Camera<f64> {
        Camera::from_parts(20.0, 20.0, 8.0, 8.0, 16, 16, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn auxiliary_loss_vanishes_for_all_ones_mask() {
        let c = cam();
        let d = DepthMap::filled(16, 16, 2.0).unwrap();
        let a = ImageBuffer::filled(16, 16, [0.2; 3]);
        let b = ImageBuffer::filled(16, 16, [0.7; 3]);
        let ones = BinaryMask::ones(16, 16);
        let r = AuxReference { image: &a, camera: &c, rendered: &b, depth: &d, static_mask: &ones };
        assert_eq!(auxiliary_loss(&ones, &c, &d, &[r], 0.01).unwrap(), 0.0);
        let zeros = BinaryMask::zeros(16, 16);
        let r = AuxReference { static_mask: &zeros, ..r };
        assert_eq!(auxiliary_loss(&BinaryMask::zeros(16, 16), &c, &d, &[r], 0.01).unwrap(), 0.0);
    }

    #[test]
    fn auxiliary_single_pixel_is_residual_over_pixel_count() {
        let c = cam();
        let d = DepthMap::filled(16, 16, 2.0).unwrap();
        let a = ImageBuffer::filled(16, 16, [0.2; 3]);
        let b = ImageBuffer::from_fn(16, 16, |x, y| if (x, y) == (5, 9) { [0.5; 3] } else { [0.2; 3] });
        let ones = BinaryMask::ones(16, 16);
        let m = BinaryMask::from_fn(16, 16, |x, y| (x, y) != (5, 9));
        let r = AuxReference { image: &a, camera: &c, rendered: &b, depth: &d, static_mask: &ones };
        let l = auxiliary_loss(&m, &c, &d, &[r], 0.01).unwrap();
        assert!((l - 0.09 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn single_gaussian_color_converges() {
        let c = cam();
        let g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 2.0), 2.0, 0.999, [0.1, 0.5, 0.9]).unwrap();
        let scene = GaussianScene::new(vec![g]).unwrap();
        let opts = RenderOptions::default();
        // Target is what the primitive would render with color (0.6, 0.3, 0.2).
        let goal = [0.6, 0.3, 0.2];
        let mut want = scene.clone();
        want.primitives_mut()[0].set_color(goal);
        let target = render_with(&want, &c, &opts).unwrap().color;
        let ents = crate::scene_model::EntityMap::new(16, 16, vec![0; 256]).unwrap();
        let view = CascadeView { image: &target, camera: &c, entities: &ents };
        // One primitive covers every pixel, so the per-pixel step is divided
        // by the pixel count.
        let cfg = RefineConfig { iterations: 200, opacity_step: 0.0, color_step: 2.0 / 256.0, ..Default::default() };
        let (out, hist) = refine(&scene, &[], &[view], &MaskCascadeConfig::default(), &cfg, &opts).unwrap();
        let got = out.primitives()[0].color();
        for k in 0..3 {
            assert!((got[k] - goal[k]).abs() < 1e-3, "{got:?}");
        }
        assert!(hist.last().unwrap().masked <= hist[0].masked);
    }

    #[test]
    fn zero_step_leaves_scene_bitwise_unchanged() {
        let c = cam();
        let g = GaussianPrimitive::isotropic(Vector3::new(0.1, 0.0, 2.0), 1.5, 0.7, [0.3, 0.4, 0.5]).unwrap();
        let scene = GaussianScene::new(vec![g]).unwrap();
        let target = ImageBuffer::filled(16, 16, [0.9; 3]);
        let ents = crate::scene_model::EntityMap::new(16, 16, vec![0; 256]).unwrap();
        let view = CascadeView { image: &target, camera: &c, entities: &ents };
        let cfg = RefineConfig { iterations: 1, color_step: 0.0, opacity_step: 0.0, ..Default::default() };
        let (out, _) =
            refine(&scene, &[], &[view], &MaskCascadeConfig::default(), &cfg, &RenderOptions::default()).unwrap();
        assert_eq!(out, scene);
    }
}
