//! Metric reports: JSON and CSV output, schema validation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MaskMetrics;
use super::Variant;
use crate::error::{Error, Result};
use crate::scene_model::{read_json, write_json};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewMetrics {
    pub query: usize,
    /// `None` with `psnr_infinite` set when the render matches exactly, or
    /// when the view failed.
    pub psnr: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim: Option<f64>,
    pub mask: Option<MaskMetrics>,
    pub stage1_refs: Vec<usize>,
    pub stage2_refs: Vec<usize>,
    pub primitives_before: usize,
    pub primitives_after: usize,
    pub pruned: usize,
    pub guarded: usize,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeans {
    /// Over views with a finite PSNR.
    pub psnr: Option<f64>,
    pub infinite_psnr_views: usize,
    pub ssim: Option<f64>,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub failed_views: usize,
}

impl SceneMeans {
    pub fn from_views(views: &[ViewMetrics]) -> Self {
        fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
            let (mut s, mut n) = (0.0, 0usize);
            for x in v {
                s += x;
                n += 1;
            }
            (n > 0).then(|| s / n as f64)
        }
        Self {
            psnr: mean(views.iter().filter_map(|v| v.psnr)),
            infinite_psnr_views: views.iter().filter(|v| v.psnr_infinite).count(),
            ssim: mean(views.iter().filter_map(|v| v.ssim)),
            iou: mean(views.iter().filter_map(|v| v.mask.map(|m| m.iou))),
            precision: mean(views.iter().filter_map(|v| v.mask.map(|m| m.precision))),
            recall: mean(views.iter().filter_map(|v| v.mask.map(|m| m.recall))),
            failed_views: views.iter().filter(|v| v.error.is_some()).count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantReport {
    pub variant: Variant,
    pub views: Vec<ViewMetrics>,
    pub means: SceneMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub version: u32,
    /// SHA-256 of the canonical JSON of the experiment config.
    pub config_hash: String,
    pub scene: String,
    pub seed: Option<u64>,
    pub width: usize,
    pub height: usize,
    pub queries: Vec<usize>,
    pub variants: Vec<VariantReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

impl MetricReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

fn bad(msg: String) -> Error {
    Error::Dataset(format!("report schema: {msg}"))
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(bad(format!("{name} {v} outside [0, 1]")))
    }
}

/// Checks value ranges and that the stored means agree with the views.
pub fn validate_report(report: &MetricReport) -> Result<()> {
    if report.version != REPORT_VERSION {
        return Err(bad(format!("version {} (expected {REPORT_VERSION})", report.version)));
    }
    if report.config_hash.len() != 64 || !report.config_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad("config hash is not a SHA-256 hex digest".into()));
    }
    for vr in &report.variants {
        for v in &vr.views {
            if let Some(p) = v.psnr {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(bad(format!("view {} psnr {p}", v.query)));
                }
                if v.psnr_infinite {
                    return Err(bad(format!("view {} has both a psnr and the infinite flag", v.query)));
                }
            }
            if let Some(s) = v.ssim {
                if !(-1.0..=1.0).contains(&s) {
                    return Err(bad(format!("view {} ssim {s} outside [-1, 1]", v.query)));
                }
            }
            if let Some(m) = &v.mask {
                unit("iou", m.iou)?;
                unit("precision", m.precision)?;
                unit("recall", m.recall)?;
            }
        }
        let fresh = SceneMeans::from_views(&vr.views);
        if fresh != vr.means {
            return Err(bad(format!("{:?}: stored means disagree with the views", vr.variant)));
        }
    }
    Ok(())
}

pub fn write_report_json(path: &Path, report: &MetricReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report_json(path: &Path) -> Result<MetricReport> {
    let r: MetricReport = read_json(path)?;
    validate_report(&r)?;
    Ok(r)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per (variant, query view).
pub fn write_report_csv(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Dataset(format!("{}: {e}", path.display()));
    w.write_record([
        "scene",
        "variant",
        "query",
        "psnr",
        "psnr_infinite",
        "ssim",
        "iou",
        "precision",
        "recall",
        "empty_prediction",
        "primitives_after",
        "pruned",
        "error",
    ])
    .map_err(io)?;
    for vr in &report.variants {
        for v in &vr.views {
            w.write_record([
                report.scene.clone(),
                vr.variant.name().to_string(),
                v.query.to_string(),
                opt(v.psnr),
                v.psnr_infinite.to_string(),
                opt(v.ssim),
                opt(v.mask.map(|m| m.iou)),
                opt(v.mask.map(|m| m.precision)),
                opt(v.mask.map(|m| m.recall)),
                v.mask.map(|m| m.empty_prediction.to_string()).unwrap_or_default(),
                v.primitives_after.to_string(),
                v.pruned.to_string(),
                v.error.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean of per-scene means, for each variant present in every report.
pub fn aggregate_scenes(reports: &[MetricReport]) -> BTreeMap<String, Option<f64>> {
    let mut out = BTreeMap::new();
    let Some(first) = reports.first() else { return out };
    for vr in &first.variants {
        let means: Option<Vec<f64>> =
            reports.iter().map(|r| r.variant(vr.variant).and_then(|x| x.means.psnr)).collect();
        out.insert(vr.variant.name().to_string(), means.map(|m| m.iter().sum::<f64>() / m.len() as f64));
    }
    out
}

/// Writes a short plain-text table of the variant means.
pub fn write_summary(out: &mut impl Write, report: &MetricReport) -> std::io::Result<()> {
    writeln!(out, "{} ({}x{}), queries {:?}", report.scene, report.width, report.height, report.queries)?;
    for vr in &report.variants {
        let m = &vr.means;
        writeln!(
            out,
            "  {:<12} psnr {:>8} ssim {:>8} iou {:>8} recall {:>8}{}",
            vr.variant.name(),
            opt(m.psnr),
            opt(m.ssim),
            opt(m.iou),
            opt(m.recall),
            if m.failed_views > 0 { format!("  ({} failed)", m.failed_views) } else { String::new() }
        )?;
    }
    Ok(())
}
