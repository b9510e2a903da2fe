//! Two-stage inference: coarse reconstruction and pool scoring, reference
//! re-selection, distractor pruning and the fine reconstruction.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_cascade::{
    entity_fill, predict_query_mask, predict_query_mask_detailed, reference_static_mask, CascadeTrace, CascadeView,
    MaskCascadeConfig,
};
use crate::rasterizer::{render_with, GaussianScene, RenderOptions};
use crate::real::Real;
use crate::reconstruction::{reconstruct, BackendConfig, ReferenceView};
use crate::refinement::{refine, RefineConfig};
use crate::scene_model::{BinaryMask, Camera, DepthMap, EntityMap, ImageBuffer};

/// One candidate view of the scene-images pool.
#[derive(Clone, Copy, Debug)]
pub struct PoolEntry<'a, T: Real> {
    pub image: &'a ImageBuffer<T>,
    pub camera: &'a Camera<T>,
    pub entities: &'a EntityMap,
    /// Known depth, used by the oracle-depth backend.
    pub depth: Option<&'a DepthMap<T>>,
}

impl<'a, T: Real> PoolEntry<'a, T> {
    pub fn cascade_view(&self) -> CascadeView<'a, T> {
        CascadeView { image: self.image, camera: self.camera, entities: self.entities }
    }

    pub fn reference_view(&self) -> ReferenceView<'a, T> {
        ReferenceView { image: self.image, camera: self.camera, depth: self.depth }
    }
}

/// How pool scores of chosen and non-chosen entries are made comparable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreNormalization {
    /// Raw positive-pixel counts: chosen entries by their entity-filled
    /// reference mask, the others by their final cascade mask.
    Raw,
    /// Non-chosen counts are rescaled by the covered fraction, so that
    /// pixels no reference observes do not count against an entry.
    Coverage,
    /// Chosen entries are scored like the others: by their final cascade
    /// mask as a query against the chosen references.
    Uniform,
    /// Every entry is scored as a query and its count rescaled by the
    /// covered fraction, so pixels the initial references do not observe
    /// count neither for nor against an entry. A chosen entry is scored
    /// against the other chosen references only.
    #[default]
    UniformCoverage,
}

/// Which per-reference mask marks the pixels whose primitives are pruned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMaskSource {
    /// Entity-filled static mask of the reference against its re-render.
    ReferenceStatic,
    /// Final cascade mask of the reference as a query against all selected
    /// references.
    #[default]
    Cascade,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneGuard {
    /// A masked primitive survives when at least this many references fail
    /// to observe its position as static. `None` means all references.
    pub quorum: Option<usize>,
    /// Count references that cannot see the position (out of frame, behind,
    /// or occluded) as failing to observe it.
    pub count_unseen: bool,
    /// Relative depth tolerance of the visibility test.
    pub depth_tolerance: f64,
}

impl Default for PruneGuard {
    fn default() -> Self {
        Self { quorum: None, count_unseen: true, depth_tolerance: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub n: usize,
    pub k: usize,
    pub stage1_scale: f64,
    /// Re-select references by pool score; off keeps the initial sample.
    pub scoring: bool,
    pub pruning: bool,
    pub prune_masks: PruneMaskSource,
    pub guard: PruneGuard,
    pub normalization: ScoreNormalization,
    /// Coverage-normalized scores divide by at least this fraction of the
    /// widest coverage in the pool, so entries the references barely see
    /// are not inflated.
    pub coverage_floor: f64,
    /// Bonus, as a fraction of the stage-1 image area, added to the
    /// initial references before re-selection: another entry displaces one
    /// only when it scores higher by more than this.
    pub retain_margin: f64,
    pub backend: BackendConfig,
    pub cascade: MaskCascadeConfig,
    /// Refinement of the fine scene against the non-selected pool entries.
    pub refine: Option<RefineConfig>,
    /// Record wall-clock timings in the report.
    pub timings: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n: 4,
            k: 8,
            stage1_scale: 0.5,
            scoring: true,
            pruning: true,
            prune_masks: PruneMaskSource::Cascade,
            guard: PruneGuard::default(),
            normalization: ScoreNormalization::UniformCoverage,
            coverage_floor: 0.5,
            retain_margin: 0.1,
            backend: BackendConfig::default(),
            cascade: MaskCascadeConfig::default(),
            refine: None,
            timings: true,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > self.k {
            return Err(Error::Config(format!("need 0 < N <= K (N={}, K={})", self.n, self.k)));
        }
        if !(self.stage1_scale > 0.0 && self.stage1_scale <= 1.0) {
            return Err(Error::Config(format!("stage-1 scale must be in (0, 1], got {}", self.stage1_scale)));
        }
        if !(self.retain_margin >= 0.0 && self.retain_margin.is_finite()) {
            return Err(Error::Config(format!("retain margin must be nonnegative, got {}", self.retain_margin)));
        }
        if !(0.0..=1.0).contains(&self.coverage_floor) {
            return Err(Error::Config(format!("coverage floor must be in [0, 1], got {}", self.coverage_floor)));
        }
        if let Some(q) = self.guard.quorum {
            if q == 0 || q > self.n {
                return Err(Error::Config(format!("guard quorum must be in 1..={}, got {q}", self.n)));
            }
        }
        self.backend.validate()?;
        self.cascade.validate()?;
        if let Some(r) = &self.refine {
            r.validate()?;
        }
        Ok(())
    }
}

/// Indices of the `n` cameras whose centers are nearest to `query`, ties by
/// index, returned in index order.
pub fn sample_initial_references<T: Real>(cameras: &[&Camera<T>], query: &Camera<T>, n: usize) -> Result<Vec<usize>> {
    if cameras.len() < n {
        return Err(Error::InvalidInput(format!("pool of {} entries cannot supply {n} references", cameras.len())));
    }
    let q = query.center();
    let mut order: Vec<(T, usize)> = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d = c.center() - q;
            (d.dot(&d).sqrt(), i)
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = order.into_iter().take(n).map(|(_, i)| i).collect();
    out.sort_unstable();
    Ok(out)
}

/// The `n` highest scores, ties by index, in index order.
pub fn select_top_n(scores: &[f64], n: usize) -> Result<Vec<usize>> {
    if scores.len() < n {
        return Err(Error::InvalidInput(format!("{} scores cannot supply {n} references", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    order.truncate(n);
    order.sort_unstable();
    Ok(order)
}

/// Static mask of a reference against its re-render, snapped to entities.
pub fn reference_entity_mask<T: Real>(
    scene: &GaussianScene<T>,
    view: &CascadeView<'_, T>,
    cfg: &MaskCascadeConfig,
    opts: &RenderOptions,
) -> Result<BinaryMask> {
    let r = render_with(scene, view.camera, opts)?;
    let m = reference_static_mask(view.image, &r.color, cfg.rho_ref)?;
    entity_fill(&m, view.entities, cfg.fill_fraction)
}

/// Score of every pool entry: for entries in `chosen`, the number of static
/// pixels of their entity-filled reference mask; for the others, the number
/// of static pixels of their final cascade mask as a query.
pub fn score_pool<T: Real>(
    pool: &[PoolEntry<'_, T>],
    scene: &GaussianScene<T>,
    chosen: &[usize],
    cfg: &MaskCascadeConfig,
    normalization: ScoreNormalization,
    coverage_floor: f64,
    opts: &RenderOptions,
) -> Result<Vec<f64>> {
    let refs: Vec<CascadeView<'_, T>> = chosen.iter().map(|i| pool[*i].cascade_view()).collect();
    let uniform = matches!(normalization, ScoreNormalization::Uniform | ScoreNormalization::UniformCoverage);
    // (positive pixels, covered pixels, image pixels) per entry
    let counts: Vec<(f64, f64, f64)> = (0..pool.len())
        .into_par_iter()
        .map(|j| {
            let view = pool[j].cascade_view();
            let hw = (view.image.width() * view.image.height()) as f64;
            if chosen.contains(&j) && !uniform {
                let ones = reference_entity_mask(scene, &view, cfg, opts)?.count_ones() as f64;
                return Ok((ones, hw, hw));
            }
            let leave_out = normalization == ScoreNormalization::UniformCoverage;
            let trace = match chosen.iter().position(|c| *c == j) {
                Some(p) if leave_out && refs.len() > 1 => {
                    let others: Vec<CascadeView<'_, T>> =
                        refs.iter().enumerate().filter(|(i, _)| *i != p).map(|(_, r)| *r).collect();
                    predict_query_mask(&others, &view, scene, cfg, opts)?
                }
                _ => predict_query_mask(&refs, &view, scene, cfg, opts)?,
            };
            Ok((trace.m_final.count_ones() as f64, trace.m_d.count_ones() as f64, hw))
        })
        .collect::<Result<_>>()?;
    if matches!(normalization, ScoreNormalization::Raw | ScoreNormalization::Uniform) {
        return Ok(counts.iter().map(|c| c.0).collect());
    }
    let widest = counts.iter().map(|c| c.1).fold(0.0, f64::max);
    let floor = coverage_floor * widest;
    Ok(counts
        .iter()
        .map(|&(ones, covered, hw)| {
            let denom = covered.max(floor);
            if denom > 0.0 {
                ones * hw / denom
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub pruned: usize,
    pub guarded: usize,
    pub kept: usize,
}

/// Whether reference `cam` observes `point` as static under `mask`:
/// `Some(true)` static, `Some(false)` masked, `None` not visible.
fn observe<T: Real>(
    point: &nalgebra::Vector3<T>,
    cam: &Camera<T>,
    mask: &BinaryMask,
    depth: Option<&DepthMap<T>>,
    tol: T,
) -> Option<bool> {
    let (u, v, z) = cam.project_point(point).visible()?;
    let (x, y) = cam.pixel_of(u, v)?;
    if let Some(d) = depth {
        let dz = d.get(x, y);
        if dz > T::zero() && z > dz * (T::one() + tol) {
            return None;
        }
    }
    Some(mask.get(x, y))
}

/// Removes primitives whose source pixel is masked (0) in its reference,
/// except those the guard protects: primitives whose position fewer than
/// `quorum` references observe as static. Surviving primitives are moved
/// unchanged.
pub fn prune_distractors<T: Real>(
    scene: &GaussianScene<T>,
    masks: &[BinaryMask],
    cameras: &[&Camera<T>],
    depths: &[Option<&DepthMap<T>>],
    guard: &PruneGuard,
) -> Result<(GaussianScene<T>, PruneReport)> {
    if masks.len() != cameras.len() || depths.len() != cameras.len() {
        return Err(Error::InvalidInput("prune: one mask, camera and depth slot per reference required".into()));
    }
    let n = masks.len();
    let quorum = guard.quorum.unwrap_or(n).min(n);
    let tol = T::lit(guard.depth_tolerance);
    let mut report = PruneReport::default();
    let mut kept = Vec::with_capacity(scene.len());
    for (idx, g) in scene.primitives().iter().enumerate() {
        let p = g.provenance().ok_or(Error::MissingProvenance { index: idx })?;
        let r = p.reference as usize;
        let mask =
            masks.get(r).ok_or_else(|| Error::InvalidInput(format!("primitive {idx} references unknown view {r}")))?;
        let px = p.pixel as usize;
        if px >= mask.data().len() {
            return Err(Error::InvalidInput(format!("primitive {idx} pixel {px} outside reference {r}")));
        }
        if mask.at(px) {
            kept.push(g.clone());
            continue;
        }
        let failing = (0..n)
            .filter(|i| match observe(g.position(), cameras[*i], &masks[*i], depths[*i], tol) {
                Some(s) => !s,
                None => guard.count_unseen,
            })
            .count();
        if failing >= quorum {
            report.guarded += 1;
            kept.push(g.clone());
        } else {
            report.pruned += 1;
        }
    }
    report.kept = kept.len();
    Ok((GaussianScene::new(kept)?, report))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub stage1_refs: Vec<usize>,
    pub stage2_refs: Vec<usize>,
    pub scores: Vec<f64>,
    pub primitives_before: usize,
    pub pruned_count: usize,
    pub guarded_count: usize,
    pub kept_count: usize,
    pub refine_initial_loss: Option<f64>,
    pub refine_final_loss: Option<f64>,
    pub warnings: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct InferenceOutput<T: Real> {
    pub render: ImageBuffer<T>,
    pub scene: GaussianScene<T>,
    /// Cascade trace for the query, when a query observation was supplied.
    pub query_trace: Option<CascadeTrace>,
    pub report: InferenceReport,
}

/// Downscaled copies of a pool for stage 1.
struct ScaledPool<T: Real> {
    images: Vec<ImageBuffer<T>>,
    cameras: Vec<Camera<T>>,
    entities: Vec<EntityMap>,
    depths: Vec<Option<DepthMap<T>>>,
}

impl<T: Real> ScaledPool<T> {
    fn new(pool: &[PoolEntry<'_, T>], scale: f64) -> Result<Self> {
        let mut out = Self { images: vec![], cameras: vec![], entities: vec![], depths: vec![] };
        for e in pool {
            let cam = e.camera.scaled(T::lit(scale))?;
            let img = e.image.resample_area(scale)?;
            if img.dims() != cam.dims() {
                return Err(Error::InvalidInput("stage-1 image and camera sizes disagree".into()));
            }
            out.entities.push(e.entities.resample_nearest(cam.width(), cam.height())?);
            out.depths.push(e.depth.map(|d| d.resample_area(scale)).transpose()?);
            out.images.push(img);
            out.cameras.push(cam);
        }
        Ok(out)
    }

    fn entries(&self) -> Vec<PoolEntry<'_, T>> {
        (0..self.images.len())
            .map(|i| PoolEntry {
                image: &self.images[i],
                camera: &self.cameras[i],
                entities: &self.entities[i],
                depth: self.depths[i].as_ref(),
            })
            .collect()
    }
}

struct Clock {
    enabled: bool,
    start: Instant,
}

impl Clock {
    fn lap(&mut self, report: &mut InferenceReport, name: &str) {
        if self.enabled {
            report.timings_ms.insert(name.to_string(), self.start.elapsed().as_secs_f64() * 1e3);
        }
        self.start = Instant::now();
    }
}

/// Runs both stages for `query_cam` over `pool`. When `query` is given, its
/// image and entities are used to compute the query's cascade mask against
/// the final references.
pub fn two_stage_infer<T: Real>(
    pool: &[PoolEntry<'_, T>],
    query_cam: &Camera<T>,
    query: Option<(&ImageBuffer<T>, &EntityMap)>,
    cfg: &InferenceConfig,
    opts: &RenderOptions,
) -> Result<InferenceOutput<T>> {
    cfg.validate()?;
    if pool.len() < cfg.n {
        return Err(Error::InvalidInput(format!("pool of {} entries is smaller than N={}", pool.len(), cfg.n)));
    }
    let mut report = InferenceReport::default();
    let mut clock = Clock { enabled: cfg.timings, start: Instant::now() };
    let cams: Vec<&Camera<T>> = pool.iter().map(|e| e.camera).collect();
    let initial = sample_initial_references(&cams, query_cam, cfg.n)?;
    report.stage1_refs = initial.clone();

    let chosen = if cfg.scoring {
        let small = ScaledPool::new(pool, cfg.stage1_scale)?;
        let entries = small.entries();
        let refs: Vec<ReferenceView<'_, T>> = initial.iter().map(|i| entries[*i].reference_view()).collect();
        let coarse = reconstruct(&refs, &cfg.backend)?;
        clock.lap(&mut report, "stage1_reconstruct");
        let cascade = cfg.cascade.scaled(cfg.stage1_scale);
        report.scores = score_pool(&entries, &coarse, &initial, &cascade, cfg.normalization, cfg.coverage_floor, opts)?;
        clock.lap(&mut report, "stage1_scoring");
        if report.scores.iter().all(|s| *s == 0.0) {
            let w = "every pool entry scored zero; keeping the initial references".to_string();
            log::warn!("{w}");
            report.warnings.push(w);
            initial
        } else {
            let hw = (entries[0].image.width() * entries[0].image.height()) as f64;
            let held: Vec<f64> = report
                .scores
                .iter()
                .enumerate()
                .map(|(i, s)| if initial.contains(&i) { s + cfg.retain_margin * hw } else { *s })
                .collect();
            select_top_n(&held, cfg.n)?
        }
    } else {
        initial
    };
    report.stage2_refs = chosen.clone();

    let refs: Vec<ReferenceView<'_, T>> = chosen.iter().map(|i| pool[*i].reference_view()).collect();
    let mut scene = reconstruct(&refs, &cfg.backend)?;
    report.primitives_before = scene.len();
    clock.lap(&mut report, "stage2_reconstruct");
    let ref_views: Vec<CascadeView<'_, T>> = chosen.iter().map(|i| pool[*i].cascade_view()).collect();

    if cfg.pruning {
        let masks = ref_views
            .par_iter()
            .map(|v| match cfg.prune_masks {
                PruneMaskSource::ReferenceStatic => reference_entity_mask(&scene, v, &cfg.cascade, opts),
                PruneMaskSource::Cascade => Ok(predict_query_mask(&ref_views, v, &scene, &cfg.cascade, opts)?.m_final),
            })
            .collect::<Result<Vec<_>>>()?;
        let ref_cams: Vec<&Camera<T>> = chosen.iter().map(|i| pool[*i].camera).collect();
        let depths: Vec<Option<&DepthMap<T>>> = chosen.iter().map(|i| pool[*i].depth).collect();
        let (pruned, pr) = prune_distractors(&scene, &masks, &ref_cams, &depths, &cfg.guard)?;
        report.pruned_count = pr.pruned;
        report.guarded_count = pr.guarded;
        if pruned.is_empty() {
            let w = "pruning would remove every primitive; pruning skipped".to_string();
            log::warn!("{w}");
            report.warnings.push(w);
        } else {
            scene = pruned;
        }
        clock.lap(&mut report, "stage2_pruning");
    }

    if let Some(rcfg) = &cfg.refine {
        let targets: Vec<CascadeView<'_, T>> =
            (0..pool.len()).filter(|i| !chosen.contains(i)).map(|i| pool[i].cascade_view()).collect();
        if targets.is_empty() {
            report.warnings.push("no pool entries left for refinement".into());
        } else {
            let (refined, history) = refine(&scene, &ref_views, &targets, &cfg.cascade, rcfg, opts)?;
            let lambda = if rcfg.mask_source == crate::refinement::MaskSource::Cascade { rcfg.lambda_aux } else { 0.0 };
            report.refine_initial_loss = history.first().map(|r| r.total(lambda));
            report.refine_final_loss = history.last().map(|r| r.total(lambda));
            scene = refined;
        }
        clock.lap(&mut report, "stage2_refine");
    }
    report.kept_count = scene.len();

    let render = render_with(&scene, query_cam, opts)?.color;
    let query_trace = match query {
        Some((image, entities)) => {
            let view = CascadeView { image, camera: query_cam, entities };
            Some(predict_query_mask_detailed(&ref_views, &view, &scene, &cfg.cascade, opts)?.trace)
        }
        None => None,
    };
    clock.lap(&mut report, "render");
    Ok(InferenceOutput { render, scene, query_trace, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_n_examples() {
        assert_eq!(select_top_n(&[5.0, 9.0, 1.0, 7.0], 2).unwrap(), vec![1, 3]);
        assert_eq!(select_top_n(&[2.0; 6], 3).unwrap(), vec![0, 1, 2]);
        assert!(select_top_n(&[1.0], 2).is_err());
    }

    #[test]
    fn nearest_on_a_line() {
        use nalgebra::{Matrix3, Vector3};
        let cams: Vec<Camera<f64>> = [-3.0, -1.0, 0.5, 2.0, 4.0]
            .iter()
            .map(|x| {
                Camera::from_parts(10.0, 10.0, 5.0, 5.0, 10, 10, Matrix3::identity(), Vector3::new(-x, 0.0, 0.0))
                    .unwrap()
            })
            .collect();
        let q = Camera::from_parts(10.0, 10.0, 5.0, 5.0, 10, 10, Matrix3::identity(), Vector3::zeros()).unwrap();
        let refs: Vec<&Camera<f64>> = cams.iter().collect();
        assert_eq!(sample_initial_references(&refs, &q, 3).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn config_rejects_n_above_k() {
        let cfg = InferenceConfig { n: 9, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_bad_scoring_knobs() {
        assert!(InferenceConfig { coverage_floor: 1.5, ..Default::default() }.validate().is_err());
        assert!(InferenceConfig { retain_margin: -0.1, ..Default::default() }.validate().is_err());
        assert!(InferenceConfig { retain_margin: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(InferenceConfig { coverage_floor: 0.0, retain_margin: 0.0, ..Default::default() }.validate().is_ok());
    }
}
