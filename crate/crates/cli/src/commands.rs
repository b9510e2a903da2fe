use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use dfgs::evaluation::{
    aggregate_scenes, entity_maps, mask_metrics, prepare_scene, psnr, run_prepared, ssim, write_outputs, write_summary,
    DataSource, EntitySource, ExperimentConfig, MaskMetrics, MetricReport, Psnr, RunOptions, Variant,
};
use dfgs::inference::{two_stage_infer, InferenceConfig, InferenceReport, PoolEntry};
use dfgs::mask_cascade::{dump_trace, predict_query_mask_detailed, CascadeView, MaskCascadeConfig, WarpStats};
use dfgs::rasterizer::{render_with, RenderOptions};
use dfgs::reconstruction::{reconstruct, BackendConfig, ReferenceView};
use dfgs::refinement::RefineConfig;
use dfgs::scene_model::{load_dataset, read_json, save_dataset, save_image_png, write_json, BinaryMask};
use dfgs::synthetic::{
    benchmark_scene_seeded, composite_distractors, generate_scene, nearest_views, save_benchmark_scene,
    GeneratorConfig, SuiteScene,
};
use dfgs::{Dataset, Error, Image, Result};

use crate::{Cli, Command, Global};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen(a) => gen(g, a),
        Command::Recon(a) => recon(g, a),
        Command::Mask(a) => mask(g, a),
        Command::Infer(a) => infer(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Bench(a) => bench(g, a),
    }
}

fn load_config<C: DeserializeOwned + Default>(g: &Global) -> Result<C> {
    match &g.config {
        Some(p) => read_json(p).map_err(|e| Error::Config(e.to_string())),
        None => Ok(C::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))
}

fn config_hash<C: Serialize>(c: &C) -> String {
    hex::encode(Sha256::digest(serde_json::to_string(c).expect("config serializes").as_bytes()))
}

fn check_view(ds: &Dataset, v: usize) -> Result<()> {
    if v >= ds.len() {
        return Err(Error::Config(format!("view {v} out of range ({} views)", ds.len())));
    }
    Ok(())
}

/// Relative path and SHA-256 of every file under `dir`, sorted by path.
fn digest_tree(dir: &Path) -> Result<Vec<(String, String)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let bytes = std::fs::read(&p).map_err(|e| Error::Dataset(format!("{}: {e}", p.display())))?;
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.push((rel, hex::encode(Sha256::digest(&bytes))));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[derive(Serialize)]
struct ImageScore {
    psnr: Option<f64>,
    psnr_infinite: bool,
    ssim: Option<f64>,
}

fn score(render: &Image, target: &Image) -> Result<ImageScore> {
    let p = psnr(render, target)?;
    let s = if render.width() >= 11 && render.height() >= 11 { Some(ssim(render, target)?) } else { None };
    Ok(ImageScore {
        psnr: match p {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        },
        psnr_infinite: p.is_infinite(),
        ssim: s,
    })
}

/// Evaluation target of a view: its clean plate when the dataset has one.
fn target(ds: &Dataset, v: usize) -> &Image {
    ds.clean_images.as_ref().map(|c| &c[v]).unwrap_or(&ds.images[v])
}

// ---------------------------------------------------------------- gen

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write one benchmark scene (S1..S5) instead of a generator config.
    #[arg(long, conflicts_with = "suite")]
    pub scene: Option<String>,
    /// Write all benchmark scenes S1..S5.
    #[arg(long)]
    pub suite: bool,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
}

#[derive(Serialize)]
struct GenReport {
    command: &'static str,
    config_hash: String,
    scenes: Vec<String>,
    files: Vec<(String, String)>,
}

fn gen(g: &Global, a: &GenArgs) -> Result<()> {
    create_dir(&a.out)?;
    let (hash, scenes) = if a.suite || a.scene.is_some() {
        let ids = match &a.scene {
            Some(s) => vec![SuiteScene::parse(s)?],
            None => SuiteScene::ALL.to_vec(),
        };
        let mut entries = Vec::new();
        for id in &ids {
            let b = benchmark_scene_seeded(*id, a.width, a.height, g.seed.unwrap_or(id.seed()))?;
            let dir = if a.suite { a.out.join(id.name()) } else { a.out.clone() };
            save_benchmark_scene(&b, &dir)?;
            entries.push(b.entry);
        }
        if a.suite {
            write_json(
                &a.out.join("manifest.json"),
                &serde_json::json!({"width": a.width, "height": a.height, "scenes": entries}),
            )?;
        }
        (config_hash(&entries), ids.iter().map(|i| i.name().to_string()).collect())
    } else {
        let mut cfg: GeneratorConfig = load_config(g)?;
        if g.config.is_none() {
            cfg.width = a.width;
            cfg.height = a.height;
        }
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let (clean, _) = generate_scene(&cfg)?;
        let ds = composite_distractors(&clean, &cfg)?;
        save_dataset(&ds, &a.out)?;
        write_json(&a.out.join("generator.json"), &cfg)?;
        (config_hash(&cfg), vec![ds.name.clone()])
    };
    let files = digest_tree(&a.out)?.into_iter().filter(|(p, _)| p != "report.json").collect();
    let report = GenReport { command: "gen", config_hash: hash, scenes, files };
    write_json(&a.out.join("report.json"), &report)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- recon

#[derive(Args, Debug)]
pub struct ReconArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Reference views, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub refs: Vec<usize>,
    /// Views to render (default: all).
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct RenderedView {
    view: usize,
    #[serde(flatten)]
    score: ImageScore,
}

#[derive(Serialize)]
struct ReconReport {
    command: &'static str,
    config_hash: String,
    refs: Vec<usize>,
    primitives: usize,
    views: Vec<RenderedView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_ms: Option<std::collections::BTreeMap<String, f64>>,
}

fn recon(g: &Global, a: &ReconArgs) -> Result<()> {
    let cfg: BackendConfig = load_config(g)?;
    cfg.validate()?;
    let ds = load_dataset::<f64>(&a.data)?;
    let refs: Vec<usize> = a.refs.clone();
    if refs.is_empty() {
        return Err(Error::Config("no reference views given".into()));
    }
    for r in &refs {
        check_view(&ds, *r)?;
    }
    let views: Vec<usize> = match &a.views {
        Some(v) => v.clone(),
        None => (0..ds.len()).collect(),
    };
    for v in &views {
        check_view(&ds, *v)?;
    }
    let t0 = std::time::Instant::now();
    let rv: Vec<ReferenceView<'_, f64>> = refs
        .iter()
        .map(|i| ReferenceView {
            image: &ds.images[*i],
            camera: &ds.cameras[*i],
            depth: ds.depths.as_ref().map(|d| &d[*i]),
        })
        .collect();
    let scene = reconstruct(&rv, &cfg)?;
    let t_recon = t0.elapsed().as_secs_f64() * 1e3;
    create_dir(&a.out)?;
    let opts = RenderOptions::default();
    let mut out = Vec::new();
    for v in &views {
        let img = render_with(&scene, &ds.cameras[*v], &opts)?.color;
        save_image_png(&a.out.join(format!("render_{v:04}.png")), &img)?;
        out.push(RenderedView { view: *v, score: score(&img, target(&ds, *v))? });
    }
    let timings = g.stats.then(|| {
        [("reconstruct".to_string(), t_recon), ("total".to_string(), t0.elapsed().as_secs_f64() * 1e3)].into()
    });
    let report = ReconReport {
        command: "recon",
        config_hash: config_hash(&cfg),
        refs,
        primitives: scene.len(),
        views: out,
        timings_ms: timings,
    };
    write_json(&a.out.join("report.json"), &report)?;
    println!("{} primitives; wrote {}", scene.len(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- mask

#[derive(Args, Debug)]
pub struct MaskArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub query: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    pub refs: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskCommandConfig {
    pub backend: BackendConfig,
    pub cascade: MaskCascadeConfig,
    pub entities: EntitySource,
}

#[derive(Serialize)]
struct MaskCounts {
    m_rob: usize,
    m_q: usize,
    m_d: usize,
    m_final: usize,
    m_ref: Vec<usize>,
    m_ref_entity: Vec<usize>,
    m_qry: Vec<usize>,
}

#[derive(Serialize)]
struct MaskReport {
    command: &'static str,
    config_hash: String,
    query: usize,
    refs: Vec<usize>,
    /// Zero (distractor) pixel counts per mask.
    zeros: MaskCounts,
    warp_stats: Vec<WarpStats>,
    metrics: Option<MaskMetrics>,
}

fn mask(g: &Global, a: &MaskArgs) -> Result<()> {
    let cfg: MaskCommandConfig = load_config(g)?;
    cfg.backend.validate()?;
    cfg.cascade.validate()?;
    let ds = load_dataset::<f64>(&a.data)?;
    let refs: Vec<usize> = a.refs.clone();
    if refs.is_empty() {
        return Err(Error::Config("no reference views given".into()));
    }
    for v in refs.iter().chain([&a.query]) {
        check_view(&ds, *v)?;
    }
    let ents = entity_maps(&ds, &cfg.entities)?;
    let rv: Vec<ReferenceView<'_, f64>> = refs
        .iter()
        .map(|i| ReferenceView {
            image: &ds.images[*i],
            camera: &ds.cameras[*i],
            depth: ds.depths.as_ref().map(|d| &d[*i]),
        })
        .collect();
    let scene = reconstruct(&rv, &cfg.backend)?;
    let cv: Vec<CascadeView<'_, f64>> = refs
        .iter()
        .map(|i| CascadeView { image: &ds.images[*i], camera: &ds.cameras[*i], entities: &ents[*i] })
        .collect();
    let q = CascadeView { image: &ds.images[a.query], camera: &ds.cameras[a.query], entities: &ents[a.query] };
    let d = predict_query_mask_detailed(&cv, &q, &scene, &cfg.cascade, &RenderOptions::default())?;
    let t = &d.trace;
    create_dir(&a.out)?;
    dump_trace(t, &a.out.join("trace"))?;
    save_image_png(&a.out.join("query_render.png"), &d.query_render.color)?;
    let z = |m: &BinaryMask| m.count_zeros();
    let metrics = match &ds.distractor_masks {
        Some(gt) => Some(mask_metrics(&t.m_final, &gt[a.query], Some(&t.m_d))?),
        None => None,
    };
    let report = MaskReport {
        command: "mask",
        config_hash: config_hash(&cfg),
        query: a.query,
        refs,
        zeros: MaskCounts {
            m_rob: z(&t.m_rob),
            m_q: z(&t.m_q),
            m_d: z(&t.m_d),
            m_final: z(&t.m_final),
            m_ref: t.m_ref.iter().map(z).collect(),
            m_ref_entity: t.m_ref_entity.iter().map(z).collect(),
            m_qry: t.m_qry.iter().map(z).collect(),
        },
        warp_stats: t.warp_stats.clone(),
        metrics,
    };
    write_json(&a.out.join("report.json"), &report)?;
    if let Some(m) = &report.metrics {
        println!("iou {:.4} precision {:.4} recall {:.4}", m.iou, m.precision, m.recall);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- infer

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub query: usize,
    /// Scene-images pool (default: the K views nearest to the query).
    #[arg(long, value_delimiter = ',')]
    pub pool: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferCommandConfig {
    pub inference: InferenceConfig,
    pub entities: EntitySource,
}

#[derive(Serialize)]
struct InferCommandReport {
    command: &'static str,
    config_hash: String,
    query: usize,
    pool: Vec<usize>,
    stage1_views: Vec<usize>,
    stage2_views: Vec<usize>,
    inference: InferenceReport,
    score: ImageScore,
    mask: Option<MaskMetrics>,
}

fn infer(g: &Global, a: &InferArgs) -> Result<()> {
    let mut cfg: InferCommandConfig = load_config(g)?;
    cfg.inference.timings = g.stats;
    cfg.inference.validate()?;
    let ds = load_dataset::<f64>(&a.data)?;
    check_view(&ds, a.query)?;
    let pool: Vec<usize> = match &a.pool {
        Some(p) => p.clone(),
        None => nearest_views(&ds.cameras, a.query, &[a.query], cfg.inference.k),
    };
    for v in &pool {
        check_view(&ds, *v)?;
        if *v == a.query {
            return Err(Error::Config("the query view cannot be in its own pool".into()));
        }
    }
    if pool.len() != cfg.inference.k {
        log::warn!("pool has {} entries; configured K is {}", pool.len(), cfg.inference.k);
    }
    let ents = entity_maps(&ds, &cfg.entities)?;
    let entries: Vec<PoolEntry<'_, f64>> = pool
        .iter()
        .map(|i| PoolEntry {
            image: &ds.images[*i],
            camera: &ds.cameras[*i],
            entities: &ents[*i],
            depth: ds.depths.as_ref().map(|d| &d[*i]),
        })
        .collect();
    let out = two_stage_infer(
        &entries,
        &ds.cameras[a.query],
        Some((&ds.images[a.query], &ents[a.query])),
        &cfg.inference,
        &RenderOptions::default(),
    )?;
    create_dir(&a.out)?;
    save_image_png(&a.out.join("render.png"), &out.render)?;
    let trace = out.query_trace.as_ref().expect("query supplied");
    if g.dump_trace {
        dump_trace(trace, &a.out.join("trace"))?;
    }
    let mask = match &ds.distractor_masks {
        Some(gt) => Some(mask_metrics(&trace.m_final, &gt[a.query], Some(&trace.m_d))?),
        None => None,
    };
    let global = |v: &[usize]| v.iter().map(|i| pool[*i]).collect::<Vec<_>>();
    let report = InferCommandReport {
        command: "infer",
        config_hash: config_hash(&cfg),
        query: a.query,
        stage1_views: global(&out.report.stage1_refs),
        stage2_views: global(&out.report.stage2_refs),
        pool,
        score: score(&out.render, target(&ds, a.query))?,
        inference: out.report,
        mask,
    };
    write_json(&a.out.join("report.json"), &report)?;
    match report.score.psnr {
        Some(p) => println!("psnr {p:.3} dB; stage-2 views {:?}", report.stage2_views),
        None => println!("psnr inf; stage-2 views {:?}", report.stage2_views),
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Output directory for report.json, report.csv and renders.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate a suite scene instead of the configured source.
    #[arg(long)]
    pub scene: Option<String>,
    /// Resolution of a suite scene given with --scene.
    #[arg(long, default_value_t = 256)]
    pub res: usize,
    /// Variants to run, comma separated (default: the configured grid).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    g: &Global,
    scene: Option<&str>,
    res: usize,
    variants: Option<&Vec<String>>,
) -> Result<()> {
    if let Some(s) = scene {
        cfg.source = DataSource::Suite { scene: SuiteScene::parse(s)?, width: res, height: res, seed: None };
    }
    if let Some(seed) = g.seed {
        match &mut cfg.source {
            DataSource::Suite { seed: s, .. } => *s = Some(seed),
            DataSource::Directory { .. } => log::warn!("--seed has no effect on a dataset directory"),
        }
    }
    if let Some(v) = variants {
        cfg.variants = v.iter().map(|s| Variant::parse(s)).collect::<Result<_>>()?;
    }
    cfg.validate()
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = load_config(g)?;
    apply_overrides(&mut cfg, g, a.scene.as_deref(), a.res, a.variants.as_ref())?;
    let run = RunOptions { out_dir: Some(a.out.clone()), dump_trace: g.dump_trace, stats: g.stats };
    let scene = prepare_scene(&cfg)?;
    let report = run_prepared(&scene, &cfg, &run)?;
    write_outputs(&a.out, &cfg, &report)?;
    write_summary(&mut std::io::stdout(), &report).map_err(|e| Error::Dataset(e.to_string()))?;
    Ok(())
}

// ---------------------------------------------------------------- bench

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Suite scenes to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "S1,S2,S3,S4,S5")]
    pub scenes: Vec<String>,
    #[arg(long, default_value_t = 256)]
    pub res: usize,
    /// Variants to run, comma separated (default: baseline, cascade, scoring, full).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Also write each generated scene under <out>/data.
    #[arg(long)]
    pub save_data: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub inference: InferenceConfig,
    pub refine: Option<RefineConfig>,
    pub entities: EntitySource,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self { inference: e.inference, refine: e.refine, entities: e.entities }
    }
}

#[derive(Serialize)]
struct BenchCheck {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct BenchReport {
    command: &'static str,
    config_hash: String,
    resolution: usize,
    /// Mean over scenes of each variant's per-scene mean PSNR.
    mean_psnr: std::collections::BTreeMap<String, Option<f64>>,
    checks: Vec<BenchCheck>,
    scenes: Vec<String>,
}

fn ladder_check(r: &MetricReport) -> Option<BenchCheck> {
    let ladder = [Variant::Baseline, Variant::Cascade, Variant::Scoring, Variant::Full];
    let p: Option<Vec<f64>> = ladder.iter().map(|v| r.variant(*v).and_then(|x| x.means.psnr)).collect();
    let p = p?;
    let monotone = p.windows(2).all(|w| w[1] >= w[0]);
    let gain = p[3] - p[0];
    Some(BenchCheck {
        name: format!("{} ladder", r.scene),
        passed: monotone && gain >= 2.0,
        detail: format!("psnr {p:.3?}, gain {gain:.3} dB"),
    })
}

fn no_harm_check(r: &MetricReport) -> Option<BenchCheck> {
    let b = r.variant(Variant::Baseline)?.means.psnr?;
    let f = r.variant(Variant::Full)?.means.psnr?;
    Some(BenchCheck {
        name: format!("{} no-harm", r.scene),
        passed: (f - b).abs() <= 0.1,
        detail: format!("baseline {b:.3} dB, full {f:.3} dB"),
    })
}

fn bench(g: &Global, a: &BenchArgs) -> Result<()> {
    let bc: BenchConfig = load_config(g)?;
    let variants = match &a.variants {
        Some(v) => v.iter().map(|s| Variant::parse(s)).collect::<Result<Vec<_>>>()?,
        None => vec![Variant::Baseline, Variant::Cascade, Variant::Scoring, Variant::Full],
    };
    let ids = a.scenes.iter().map(|s| SuiteScene::parse(s)).collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    for id in &ids {
        let cfg = ExperimentConfig {
            source: DataSource::Suite { scene: *id, width: a.res, height: a.res, seed: g.seed },
            variants: variants.clone(),
            inference: bc.inference.clone(),
            refine: bc.refine.clone(),
            entities: bc.entities.clone(),
        };
        cfg.validate()?;
        let dir = a.out.join(id.name());
        let scene = prepare_scene(&cfg)?;
        if a.save_data {
            let b = benchmark_scene_seeded(*id, a.res, a.res, g.seed.unwrap_or(id.seed()))?;
            save_benchmark_scene(&b, &a.out.join("data").join(id.name()))?;
        }
        let run = RunOptions { out_dir: Some(dir.clone()), dump_trace: g.dump_trace, stats: g.stats };
        let report = run_prepared(&scene, &cfg, &run)?;
        write_outputs(&dir, &cfg, &report)?;
        write_summary(&mut std::io::stdout(), &report).map_err(|e| Error::Dataset(e.to_string()))?;
        match id {
            SuiteScene::S4 => checks.extend(ladder_check(&report)),
            SuiteScene::S1 => checks.extend(no_harm_check(&report)),
            _ => {}
        }
        reports.push(report);
    }
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let report = BenchReport {
        command: "bench",
        config_hash: config_hash(&(&bc, &variants, a.res, g.seed)),
        resolution: a.res,
        mean_psnr: aggregate_scenes(&reports),
        checks,
        scenes: ids.iter().map(|i| i.name().to_string()).collect(),
    };
    write_json(&a.out.join("bench.json"), &report)
}
