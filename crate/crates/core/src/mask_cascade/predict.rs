//! The full query-mask cascade and its trace.

use std::path::Path;

use rayon::prelude::*;

use super::combine::{disparity_mask, entity_fill, fuse_query_mask, refine_mask};
use super::robust::{reference_static_mask, robust_mask};
use super::warp::{warp_image, warp_mask, WarpStats};
use super::MaskCascadeConfig;
use crate::error::{check_dims, Error, Result};
use crate::rasterizer::{render_with, GaussianScene, RenderOptions, RenderOutput};
use crate::real::Real;
use crate::scene_model::{save_mask_png, BinaryMask, Camera, EntityMap, ImageBuffer};

/// One posed, segmented view taking part in the cascade.
#[derive(Clone, Copy, Debug)]
pub struct CascadeView<'a, T: Real> {
    pub image: &'a ImageBuffer<T>,
    pub camera: &'a Camera<T>,
    pub entities: &'a EntityMap,
}

/// Every intermediate mask of one cascade run. Per-reference masks are in
/// the reference's own frame except `m_qry`, which is warped into the query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CascadeTrace {
    pub m_rob: BinaryMask,
    pub m_ref: Vec<BinaryMask>,
    pub m_ref_entity: Vec<BinaryMask>,
    pub m_qry: Vec<BinaryMask>,
    pub m_q: BinaryMask,
    pub m_d: BinaryMask,
    pub m_final: BinaryMask,
    pub warp_stats: Vec<WarpStats>,
}

/// A trace together with the renders it was computed from.
#[derive(Clone, Debug)]
pub struct DetailedCascade<T: Real> {
    pub trace: CascadeTrace,
    pub query_render: RenderOutput<T>,
    pub reference_renders: Vec<RenderOutput<T>>,
}

struct RefBranch<T: Real> {
    render: RenderOutput<T>,
    m_ref: BinaryMask,
    m_ref_entity: BinaryMask,
    m_qry: BinaryMask,
    stats: WarpStats,
}

fn reference_branch<T: Real>(
    view: &CascadeView<'_, T>,
    scene: &GaussianScene<T>,
    query: &CascadeView<'_, T>,
    query_render: &RenderOutput<T>,
    cfg: &MaskCascadeConfig,
    opts: &RenderOptions,
) -> Result<RefBranch<T>> {
    check_dims("reference image", view.camera.dims(), view.image.dims())?;
    check_dims("reference entities", view.camera.dims(), view.entities.dims())?;
    let render = render_with(scene, view.camera, opts)?;
    let m_ref = reference_static_mask(view.image, &render.color, cfg.rho_ref)?;
    let m_ref_entity = entity_fill(&m_ref, view.entities, cfg.fill_fraction)?;
    let q_depth = &query_render.depth;
    let (mut m_qry, stats) =
        warp_mask(&m_ref_entity, &render.depth, view.camera, query.camera, q_depth, cfg.z_tolerance)?;
    if let Some(tol) = cfg.vote_consistency {
        let colors = warp_image(view.image, &render.depth, view.camera, query.camera, q_depth, cfg.z_tolerance)?;
        let (w, h) = query.camera.dims();
        let agree = BinaryMask::from_fn(w, h, |x, y| {
            colors[y * w + x].is_some_and(|c| {
                let q = query.image.pixel(x, y);
                let r = (0..3).map(|k| (c[k] - q[k]).as_f64().powi(2)).sum::<f64>() / 3.0;
                r < tol
            })
        });
        m_qry = m_qry.and(&agree)?;
    }
    Ok(RefBranch { render, m_ref, m_ref_entity, m_qry, stats })
}

/// Runs the cascade for `query` against `refs`, with `scene` reconstructed
/// from those references.
pub fn predict_query_mask_detailed<T: Real>(
    refs: &[CascadeView<'_, T>],
    query: &CascadeView<'_, T>,
    scene: &GaussianScene<T>,
    cfg: &MaskCascadeConfig,
    opts: &RenderOptions,
) -> Result<DetailedCascade<T>> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(Error::InvalidInput("mask cascade needs at least one reference".into()));
    }
    check_dims("query image", query.camera.dims(), query.image.dims())?;
    check_dims("query entities", query.camera.dims(), query.entities.dims())?;
    let query_render = render_with(scene, query.camera, opts)?;
    let m_rob = robust_mask(query.image, &query_render.color, cfg)?;
    let branches: Vec<RefBranch<T>> =
        refs.par_iter().map(|v| reference_branch(v, scene, query, &query_render, cfg, opts)).collect::<Result<_>>()?;
    let m_qry: Vec<BinaryMask> = branches.iter().map(|b| b.m_qry.clone()).collect();
    let m_q = fuse_query_mask(&m_qry, &m_rob)?;
    let coverage: Vec<_> = refs.iter().zip(&branches).map(|(v, b)| (v.camera, &b.render.depth)).collect();
    let m_d = disparity_mask(&coverage, query.camera, &query_render.depth, cfg.z_tolerance, cfg.disparity_rule)?;
    let m_final = refine_mask(&m_q, &m_d, query.entities, cfg)?;
    let mut trace = CascadeTrace {
        m_rob,
        m_ref: Vec::with_capacity(refs.len()),
        m_ref_entity: Vec::with_capacity(refs.len()),
        m_qry,
        m_q,
        m_d,
        m_final,
        warp_stats: Vec::with_capacity(refs.len()),
    };
    let mut reference_renders = Vec::with_capacity(refs.len());
    for b in branches {
        trace.m_ref.push(b.m_ref);
        trace.m_ref_entity.push(b.m_ref_entity);
        trace.warp_stats.push(b.stats);
        reference_renders.push(b.render);
    }
    Ok(DetailedCascade { trace, query_render, reference_renders })
}

pub fn predict_query_mask<T: Real>(
    refs: &[CascadeView<'_, T>],
    query: &CascadeView<'_, T>,
    scene: &GaussianScene<T>,
    cfg: &MaskCascadeConfig,
    opts: &RenderOptions,
) -> Result<CascadeTrace> {
    Ok(predict_query_mask_detailed(refs, query, scene, cfg, opts)?.trace)
}

/// Writes every mask of the trace as PNG: `m_rob.png`, `m_q.png`, `m_d.png`,
/// `m_final.png` and `ref_XX/{m_ref,m_ref_entity,m_qry}.png`.
pub fn dump_trace(trace: &CascadeTrace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in [("m_rob", &trace.m_rob), ("m_q", &trace.m_q), ("m_d", &trace.m_d), ("m_final", &trace.m_final)] {
        save_mask_png(&dir.join(format!("{name}.png")), m)?;
    }
    for i in 0..trace.m_ref.len() {
        let sub = dir.join(format!("ref_{i:02}"));
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        save_mask_png(&sub.join("m_ref.png"), &trace.m_ref[i])?;
        save_mask_png(&sub.join("m_ref_entity.png"), &trace.m_ref_entity[i])?;
        save_mask_png(&sub.join("m_qry.png"), &trace.m_qry[i])?;
    }
    Ok(())
}
