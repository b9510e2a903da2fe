//! Ablation-grid experiments over a dataset or a suite scene.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{mask_metrics, psnr, ssim, Psnr};
use super::report::{MetricReport, SceneMeans, VariantReport, ViewMetrics, REPORT_VERSION};
use crate::error::{Error, Result};
use crate::inference::{two_stage_infer, InferenceConfig, PoolEntry};
use crate::mask_cascade::{dump_trace, CascadeTrace};
use crate::rasterizer::RenderOptions;
use crate::refinement::{MaskSource, RefineConfig};
use crate::scene_model::{load_dataset, save_image_png, EntityMap, SceneDataset};
use crate::segmentation::{
    cache_segmentations, segment_color_components, ColorComponents, EntityProvider, GroundTruthEntities,
};
use crate::synthetic::{benchmark_scene_seeded, nearest_views, SuiteScene, SUITE_POOL};

/// Rungs of the ablation ladder, each adding one component to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    /// Refinement under the robust residual mask.
    RobustMask,
    /// Refinement under the robust mask with the reference-based filter.
    RefFilter,
    /// Refinement under the full cascade mask.
    Cascade,
    /// Adds stage-1 reference scoring.
    Scoring,
    /// Adds distractor pruning.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Self::Baseline, Self::RobustMask, Self::RefFilter, Self::Cascade, Self::Scoring, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::RobustMask => "robust-mask",
            Self::RefFilter => "ref-filter",
            Self::Cascade => "cascade",
            Self::Scoring => "scoring",
            Self::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    /// Inference settings of this rung. Refinement runs only when `refine`
    /// is given; its mask source follows the rung.
    pub fn inference_config(self, base: &InferenceConfig, refine: Option<&RefineConfig>) -> InferenceConfig {
        let mask_source = match self {
            Self::Baseline => MaskSource::None,
            Self::RobustMask => MaskSource::Robust,
            Self::RefFilter => MaskSource::ReferenceFiltered,
            _ => MaskSource::Cascade,
        };
        InferenceConfig {
            scoring: self >= Self::Scoring,
            pruning: self == Self::Full,
            refine: refine.map(|r| RefineConfig { mask_source, ..r.clone() }),
            ..base.clone()
        }
    }

    /// The mask from a query trace that this rung predicts.
    fn predicted_mask(self, trace: &CascadeTrace) -> Option<&crate::scene_model::BinaryMask> {
        match self {
            Self::Baseline => None,
            Self::RobustMask => Some(&trace.m_rob),
            Self::RefFilter => Some(&trace.m_q),
            _ => Some(&trace.m_final),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// A suite scene generated in memory.
    Suite {
        scene: SuiteScene,
        width: usize,
        height: usize,
        /// Overrides the scene's locked seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A dataset directory with clean plates.
    Directory {
        path: PathBuf,
        queries: Vec<usize>,
        /// Pool of nearest non-query views per query.
        #[serde(default = "default_pool")]
        pool_size: usize,
    },
}

fn default_pool() -> usize {
    SUITE_POOL
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EntitySource {
    #[default]
    GroundTruth,
    ColorComponents {
        levels: u32,
        min_region: usize,
        /// Cache root for the segmentations.
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub variants: Vec<Variant>,
    pub inference: InferenceConfig,
    /// Refinement settings applied to every variant; off by default so the
    /// grid isolates the inference-time components.
    pub refine: Option<RefineConfig>,
    pub entities: EntitySource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Suite { scene: SuiteScene::S4, width: 256, height: 256, seed: None },
            variants: Variant::ALL.to_vec(),
            inference: InferenceConfig { timings: false, ..InferenceConfig::default() },
            refine: None,
            entities: EntitySource::GroundTruth,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no variants configured".into()));
        }
        self.inference.validate()?;
        if let Some(r) = &self.refine {
            r.validate()?;
        }
        if let DataSource::Directory { queries, pool_size, .. } = &self.source {
            if queries.is_empty() {
                return Err(Error::Config("no query views configured".into()));
            }
            if *pool_size < self.inference.n {
                return Err(Error::Config(format!("pool size {pool_size} is below N={}", self.inference.n)));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Where run artifacts go and what is recorded besides the metrics.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub dump_trace: bool,
    /// Record wall-clock timings; reports are then no longer reproducible.
    pub stats: bool,
}

/// A dataset prepared for evaluation.
pub struct PreparedScene {
    pub name: String,
    pub dataset: SceneDataset<f64>,
    pub entities: Vec<EntityMap>,
    pub queries: Vec<usize>,
    pub pools: Vec<Vec<usize>>,
    pub seed: Option<u64>,
}

/// Entity maps for every view of `dataset`.
pub fn entity_maps(dataset: &SceneDataset<f64>, source: &EntitySource) -> Result<Vec<EntityMap>> {
    match source {
        EntitySource::GroundTruth => {
            let p = GroundTruthEntities;
            (0..dataset.len()).map(|i| p.segment(dataset, i)).collect()
        }
        EntitySource::ColorComponents { levels, min_region, cache } => {
            let p = ColorComponents { levels: *levels, min_region: *min_region };
            match cache {
                Some(root) => Ok(cache_segmentations(dataset, &p, root)?.maps),
                None => dataset.images.iter().map(|img| segment_color_components(img, *levels, *min_region)).collect(),
            }
        }
    }
}

pub fn prepare_scene(cfg: &ExperimentConfig) -> Result<PreparedScene> {
    let (name, dataset, queries, pools, seed) = match &cfg.source {
        DataSource::Suite { scene, width, height, seed } => {
            let seed = seed.unwrap_or(scene.seed());
            let b = benchmark_scene_seeded(*scene, *width, *height, seed)?;
            (scene.name().to_string(), b.dataset, b.entry.queries, b.entry.pools, Some(seed))
        }
        DataSource::Directory { path, queries, pool_size } => {
            let ds = load_dataset::<f64>(path)?;
            if let Some(q) = queries.iter().find(|q| **q >= ds.len()) {
                return Err(Error::Config(format!("query {q} out of range ({} views)", ds.len())));
            }
            let pools: Vec<Vec<usize>> =
                queries.iter().map(|q| nearest_views(&ds.cameras, *q, queries, *pool_size)).collect();
            if pools.iter().any(|p| p.len() < *pool_size) {
                return Err(Error::Config(format!("dataset has too few views for pools of {pool_size}")));
            }
            (ds.name.clone(), ds, queries.clone(), pools, None)
        }
    };
    if dataset.clean_images.is_none() {
        return Err(Error::Dataset(format!("{name}: dataset has no clean plates to evaluate against")));
    }
    let entities = entity_maps(&dataset, &cfg.entities)?;
    Ok(PreparedScene { name, dataset, entities, queries, pools, seed })
}

fn evaluate_view(
    scene: &PreparedScene,
    qi: usize,
    variant: Variant,
    icfg: &InferenceConfig,
    run: &RunOptions,
    opts: &RenderOptions,
) -> Result<ViewMetrics> {
    let ds = &scene.dataset;
    let q = scene.queries[qi];
    let pool: Vec<PoolEntry<'_, f64>> = scene.pools[qi]
        .iter()
        .map(|i| PoolEntry {
            image: &ds.images[*i],
            camera: &ds.cameras[*i],
            entities: &scene.entities[*i],
            depth: ds.depths.as_ref().map(|d| &d[*i]),
        })
        .collect();
    let want_trace = variant != Variant::Baseline;
    let query = want_trace.then(|| (&ds.images[q], &scene.entities[q]));
    let out = two_stage_infer(&pool, &ds.cameras[q], query, icfg, opts)?;
    let clean = &ds.clean_images.as_ref().expect("checked in prepare_scene")[q];
    let p = psnr(&out.render, clean)?;
    let mask = match (&out.query_trace, &ds.distractor_masks) {
        (Some(t), Some(gt)) => match variant.predicted_mask(t) {
            Some(m) => Some(mask_metrics(m, &gt[q], Some(&t.m_d))?),
            None => None,
        },
        _ => None,
    };
    if let Some(dir) = &run.out_dir {
        let vdir = dir.join(variant.name());
        std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        save_image_png(&vdir.join(format!("query_{q:04}.png")), &out.render)?;
        if let (true, Some(t)) = (run.dump_trace, &out.query_trace) {
            dump_trace(t, &vdir.join(format!("trace_{q:04}")))?;
        }
    }
    // Map pool-local indices back to dataset views.
    let global = |v: &[usize]| v.iter().map(|i| scene.pools[qi][*i]).collect::<Vec<_>>();
    let r = out.report;
    Ok(ViewMetrics {
        query: q,
        psnr: match p {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        },
        psnr_infinite: p.is_infinite(),
        ssim: Some(ssim(&out.render, clean)?),
        mask,
        stage1_refs: global(&r.stage1_refs),
        stage2_refs: global(&r.stage2_refs),
        primitives_before: r.primitives_before,
        primitives_after: r.kept_count,
        pruned: r.pruned_count,
        guarded: r.guarded_count,
        warnings: r.warnings,
        error: None,
        timings_ms: run.stats.then_some(r.timings_ms),
    })
}

/// Runs every configured variant on every query of a prepared scene. A view
/// that fails is recorded with its error and the run continues.
pub fn run_prepared(scene: &PreparedScene, cfg: &ExperimentConfig, run: &RunOptions) -> Result<MetricReport> {
    cfg.validate()?;
    let opts = RenderOptions::default();
    let started = Instant::now();
    let mut timings = BTreeMap::new();
    let mut variants = Vec::new();
    for &variant in &cfg.variants {
        let t0 = Instant::now();
        let icfg =
            InferenceConfig { timings: run.stats, ..variant.inference_config(&cfg.inference, cfg.refine.as_ref()) };
        let views: Vec<ViewMetrics> = (0..scene.queries.len())
            .into_par_iter()
            .map(|qi| {
                evaluate_view(scene, qi, variant, &icfg, run, &opts).unwrap_or_else(|e| {
                    if matches!(e, Error::Divergence { .. }) {
                        log::error!("{} view {}: {e}", variant.name(), scene.queries[qi]);
                    } else {
                        log::warn!("{} view {}: {e}", variant.name(), scene.queries[qi]);
                    }
                    ViewMetrics { query: scene.queries[qi], error: Some(e.to_string()), ..Default::default() }
                })
            })
            .collect();
        timings.insert(variant.name().to_string(), t0.elapsed().as_secs_f64() * 1e3);
        let means = SceneMeans::from_views(&views);
        variants.push(VariantReport { variant, views, means });
    }
    timings.insert("total".to_string(), started.elapsed().as_secs_f64() * 1e3);
    let (width, height) = scene.dataset.cameras[0].dims();
    Ok(MetricReport {
        version: REPORT_VERSION,
        config_hash: cfg.hash(),
        scene: scene.name.clone(),
        seed: scene.seed,
        width,
        height,
        queries: scene.queries.clone(),
        variants,
        timings_ms: run.stats.then_some(timings),
    })
}

/// Prepares the configured data, runs the grid and writes `report.json` and
/// `report.csv` (plus renders) when an output directory is set.
pub fn run_experiment(cfg: &ExperimentConfig, run: &RunOptions) -> Result<MetricReport> {
    cfg.validate()?;
    let scene = prepare_scene(cfg)?;
    let report = run_prepared(&scene, cfg, run)?;
    if let Some(dir) = &run.out_dir {
        write_outputs(dir, cfg, &report)?;
    }
    Ok(report)
}

pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, report: &MetricReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::scene_model::write_json(&dir.join("config.json"), cfg)?;
    super::report::write_report_json(&dir.join("report.json"), report)?;
    super::report::write_report_csv(&dir.join("report.csv"), report)
}
