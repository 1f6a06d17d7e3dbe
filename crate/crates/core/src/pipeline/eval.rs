//! Correction methods, per-case evaluation and the mask robustness sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::{prepare, Case, Prepared};
use super::metrics::{case_metrics, rmse_hu, CaseMetrics, Region};
use super::panel::{write_panel, Window};
use super::par_map;
use crate::error::{MarError, Result};
use crate::image::{Image, Sinogram};
use crate::mar::{
    dilate_mask, erode_mask, metal_trace, nmar_complete, segment_metal, MetalMask, MetalTrace, NmarConfig,
};
use crate::nn::{InferOutput, Model, Variant};
use crate::projector::Projector;

/// A way of producing a corrected image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Plain reconstruction of the corrupted scan.
    Uncorrected,
    Li,
    Nmar,
    /// A trained model; `Variant::Full` is reported as `ours`.
    Model(Variant),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Uncorrected => "uncorrected",
            Method::Li => "li",
            Method::Nmar => "nmar",
            Method::Model(Variant::Full) => "ours",
            Method::Model(v) => v.name(),
        }
    }
}

impl FromStr for Method {
    type Err = MarError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uncorrected" => Method::Uncorrected,
            "li" => Method::Li,
            "nmar" => Method::Nmar,
            "ours" | "full" => Method::Model(Variant::Full),
            other => Method::Model(other.parse()?),
        })
    }
}

/// Trained models by variant.
pub type Models = BTreeMap<Variant, Model>;

/// Corrected image of one case by one method, given the shared reconstructions.
pub fn correct(
    method: Method,
    s_ma: &Sinogram,
    trace: &MetalTrace,
    prepared: &Prepared,
    projector: &Projector,
    models: &Models,
) -> Result<Image> {
    match method {
        Method::Uncorrected => Ok(prepared.x_ma.clone()),
        Method::Li => Ok(prepared.x_li.clone()),
        Method::Nmar => {
            let s = nmar_complete(
                s_ma,
                trace,
                &prepared.x_ma,
                projector.geometry(),
                &NmarConfig::default(),
            )?;
            Ok(projector.fbp(&s)?.to_hu())
        }
        Method::Model(v) => {
            let model = models
                .get(&v)
                .ok_or_else(|| MarError::Config(format!("no trained model for method '{}'", method.name())))?;
            Ok(model
                .infer(&prepared.x_ma, &prepared.x_li, &prepared.s_li, trace, projector)?
                .x_out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub case_id: String,
    pub method: String,
    pub rmse_hu: f64,
    pub ssim: f64,
    pub roi_rmse_hu: f64,
    pub roi_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub cases: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub roi_rmse_mean: f64,
    pub roi_ssim_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<MethodSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl EvalReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for r in &rows {
            if !names.contains(&r.method) {
                names.push(r.method.clone());
            }
        }
        let summary = names
            .into_iter()
            .map(|name| {
                let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.method == name).collect();
                let col = |f: fn(&MetricRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<_>>();
                let (rmse_mean, rmse_std) = mean_std(&col(|r| r.rmse_hu));
                let (ssim_mean, ssim_std) = mean_std(&col(|r| r.ssim));
                MethodSummary {
                    method: name,
                    cases: sel.len(),
                    rmse_mean,
                    rmse_std,
                    ssim_mean,
                    ssim_std,
                    roi_rmse_mean: mean_std(&col(|r| r.roi_rmse_hu)).0,
                    roi_ssim_mean: mean_std(&col(|r| r.roi_ssim)).0,
                }
            })
            .collect();
        EvalReport { rows, summary }
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method.name())
    }

    pub fn mean_rmse(&self, method: Method) -> Option<f64> {
        self.summary_for(method).map(|s| s.rmse_mean)
    }

    /// Per-case rows in the `case_id,method,rmse_hu,ssim,roi_rmse_hu,roi_ssim` layout.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,method,rmse_hu,ssim,roi_rmse_hu,roi_ssim\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                r.case_id, r.method, r.rmse_hu, r.ssim, r.roi_rmse_hu, r.roi_ssim
            );
        }
        s
    }

    /// Aggregate table, one line per method.
    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "{:<18} {:>6} {:>20} {:>20} {:>10} {:>10}\n",
            "method", "cases", "RMSE (HU)", "SSIM", "ROI RMSE", "ROI SSIM"
        );
        for m in &self.summary {
            let _ = writeln!(
                s,
                "{:<18} {:>6} {:>12.2} ± {:<6.2} {:>11.4} ± {:<6.4} {:>10.2} {:>10.4}",
                m.method, m.cases, m.rmse_mean, m.rmse_std, m.ssim_mean, m.ssim_std, m.roi_rmse_mean, m.roi_ssim_mean
            );
        }
        s
    }

    /// Write `metrics.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::create_dir(dir)?;
        let csv = dir.join("metrics.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| MarError::io(&csv, e))?;
        crate::io::write_json(&dir.join("summary.json"), &self.summary)
    }
}

/// Image that corrected reconstructions are scored against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Reconstruction of the noise-free metal-free sinogram with the same
    /// geometry and filter. Scores artifacts only: at desk resolution the
    /// filtered backprojection alone differs from the phantom by tens of HU
    /// at sharp edges, and no sinogram correction can change that.
    #[default]
    Reconstruction,
    /// The clean phantom itself.
    Phantom,
}

impl Reference {
    pub fn image(self, case: &Case, projector: &Projector) -> Result<Image> {
        match self {
            Reference::Reconstruction => Ok(projector.fbp(&case.s_gt)?.to_hu()),
            Reference::Phantom => Ok(case.x_gt.clone()),
        }
    }
}

impl FromStr for Reference {
    type Err = MarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstruction" => Ok(Reference::Reconstruction),
            "phantom" => Ok(Reference::Phantom),
            other => Err(MarError::Config(format!("unknown reference '{other}'"))),
        }
    }
}

/// Options of [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Write side-by-side PNG panels for the first this many cases.
    pub panels: usize,
    /// Display window of the panels.
    pub window: Window,
    pub reference: Reference,
}

/// Evaluate `methods` on `cases`. Metrics use each case's true metal mask:
/// the trace fed to every method comes from it, and metal pixels are
/// excluded from RMSE and SSIM. With `out_dir`, metrics and panels are
/// written there.
pub fn evaluate(
    cases: &[Case],
    methods: &[Method],
    projector: &Projector,
    models: &Models,
    opts: &EvalOptions,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(MarError::Data("no cases to evaluate".into()));
    }
    // per case: metric rows, corrected images, reference
    type CaseResult = Result<(Vec<MetricRow>, Vec<Image>, Image)>;
    let per_case: Vec<CaseResult> = par_map(cases, |case| {
        let prepared = prepare(&case.s_ma, &case.trace, projector)?;
        let reference = opts.reference.image(case, projector)?;
        let mut rows = Vec::with_capacity(methods.len());
        let mut images = Vec::with_capacity(methods.len());
        for &m in methods {
            let x = correct(m, &case.s_ma, &case.trace, &prepared, projector, models)?;
            let CaseMetrics {
                rmse_hu,
                ssim,
                roi_rmse_hu,
                roi_ssim,
            } = case_metrics(&x, &reference, &case.mask)?;
            rows.push(MetricRow {
                case_id: case.id.clone(),
                method: m.name().into(),
                rmse_hu,
                ssim,
                roi_rmse_hu,
                roi_ssim,
            });
            images.push(x);
        }
        Ok((rows, images, reference))
    });
    let mut rows = Vec::new();
    for (k, r) in per_case.into_iter().enumerate() {
        let (case_rows, images, reference) = r?;
        rows.extend(case_rows);
        if let Some(dir) = out_dir {
            if k < opts.panels {
                let case = &cases[k];
                let named: Vec<(&str, &Image)> = methods.iter().map(|m| m.name()).zip(images.iter()).collect();
                let panels = dir.join("panels");
                crate::io::create_dir(&panels)?;
                write_panel(
                    &panels.join(format!("{}.png", case.id)),
                    &reference,
                    &named,
                    &case.mask,
                    opts.window,
                )?;
            }
        }
    }
    let report = EvalReport::from_rows(rows);
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

/// Result of correcting an arbitrary scan.
#[derive(Debug, Clone)]
pub struct ScanCorrection {
    /// HU
    pub x_out: Image,
    /// HU
    pub x_ma: Image,
    pub mask: MetalMask,
    pub trace: MetalTrace,
    /// Absent when no metal was found.
    pub intermediates: Option<InferOutput>,
}

/// Full correction path for a metal-corrupted sinogram: threshold the
/// reconstruction, build the trace, interpolate, then run the model. A scan
/// without metal is returned as its plain reconstruction.
pub fn correct_scan(model: &Model, s_ma: &Sinogram, threshold: f64, projector: &Projector) -> Result<ScanCorrection> {
    let x_ma = projector.fbp(s_ma)?.to_hu();
    let mask = segment_metal(&x_ma, threshold)?;
    let trace = metal_trace(&mask, projector.geometry())?;
    if mask.is_empty() {
        return Ok(ScanCorrection {
            x_out: x_ma.clone(),
            x_ma,
            mask,
            trace,
            intermediates: None,
        });
    }
    let prepared = prepare(s_ma, &trace, projector)?;
    let out = model.infer(&prepared.x_ma, &prepared.x_li, &prepared.s_li, &trace, projector)?;
    Ok(ScanCorrection {
        x_out: out.x_out.clone(),
        x_ma,
        mask,
        trace,
        intermediates: Some(out),
    })
}

/// Correction of an image-domain input: project it with the shared geometry,
/// then correct the projections.
pub fn correct_image(model: &Model, x: &Image, threshold: f64, projector: &Projector) -> Result<ScanCorrection> {
    let s = projector.forward_project(&x.to_mu())?;
    correct_scan(model, &s, threshold, projector)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub case_id: String,
    /// Positive: dilation radius; negative: erosion radius.
    pub radius: i64,
    /// `None` when erosion removed all metal.
    pub rmse_hu: Option<f64>,
}

/// Correct each case with its metal mask dilated (`radius > 0`) or eroded
/// (`radius < 0`). RMSE is always measured outside the true metal, against
/// the metal-free reconstruction.
pub fn robustness_sweep(model: &Model, cases: &[Case], radii: &[i64], projector: &Projector) -> Result<Vec<SweepRow>> {
    let rows: Vec<Result<Vec<SweepRow>>> = par_map(cases, |case| {
        let full = Region::full(case.x_gt.grid.height, case.x_gt.grid.width);
        let reference = Reference::Reconstruction.image(case, projector)?;
        let mut out = Vec::with_capacity(radii.len());
        for &r in radii {
            let mask = match r {
                0 => case.mask.clone(),
                r if r > 0 => dilate_mask(&case.mask, r as usize),
                r => erode_mask(&case.mask, r.unsigned_abs() as usize),
            };
            if mask.is_empty() {
                out.push(SweepRow {
                    case_id: case.id.clone(),
                    radius: r,
                    rmse_hu: None,
                });
                continue;
            }
            let trace = if r == 0 {
                case.trace.clone()
            } else {
                metal_trace(&mask, projector.geometry())?
            };
            let prepared = prepare(&case.s_ma, &trace, projector)?;
            let x = model
                .infer(&prepared.x_ma, &prepared.x_li, &prepared.s_li, &trace, projector)?
                .x_out;
            out.push(SweepRow {
                case_id: case.id.clone(),
                radius: r,
                rmse_hu: Some(rmse_hu(&x, &reference, &case.mask, full)?),
            });
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    Ok(all)
}

/// Mean RMSE per radius over the cases that were not skipped.
pub fn sweep_means(rows: &[SweepRow]) -> BTreeMap<i64, (f64, usize)> {
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.rmse_hu {
            let e = acc.entry(r.radius).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, (s / n as f64, n))).collect()
}
