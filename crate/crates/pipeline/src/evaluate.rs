//! Metric and loss evaluation over NIfTI files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use vessel_core::losses::{loss_report, LossReport, LossWeights};
use vessel_core::metrics::{metrics_report, HdAggregation, MetricsReport};
use vessel_core::nifti::{load_nifti, load_nifti_mask};
use vessel_core::{Spacing, Volume3d};

use crate::error::{PipelineError, Result};
use crate::manifest::SubjectManifest;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricsOptions {
    /// Distances in voxels instead of millimetres.
    pub voxel_units: bool,
    pub aggregation: HdAggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub subject_id: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRun {
    pub rows: Vec<MetricsRow>,
    /// Pairs that could not be evaluated, with the reason.
    pub skipped: Vec<(String, String)>,
    /// Stems present on only one side.
    pub unmatched: Vec<String>,
}

impl MetricsRun {
    /// 0 when every pair produced all three metrics, else 2; 1 when no row was produced.
    pub fn exit_code(&self) -> i32 {
        if self.rows.is_empty() {
            1
        } else if self.skipped.is_empty()
            && self.unmatched.is_empty()
            && self.rows.iter().all(|r| r.metrics.hd95.is_some())
        {
            0
        } else {
            2
        }
    }
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(SubjectManifest::scan(dir)?.entries.into_iter().map(|e| (e.subject_id, dir.join(e.path))).collect())
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".into()
    }
}

/// Mean and population standard deviation of the finite values.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn write_metrics_csv(rows: &[MetricsRow], out: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| PipelineError::Csv { path: out.to_path_buf(), source: e };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(out).map_err(csv_err)?;
    w.write_record(["subject_id", "dice", "cldice", "hd95_mm"]).map_err(csv_err)?;
    for r in rows {
        let m = r.metrics;
        w.write_record([r.subject_id.clone(), fmt(m.dice), fmt(m.cldice), fmt(m.hd95.unwrap_or(f64::NAN))])
            .map_err(csv_err)?;
    }
    let d = mean_std(rows.iter().map(|r| r.metrics.dice));
    let c = mean_std(rows.iter().map(|r| r.metrics.cldice));
    let h = mean_std(rows.iter().filter_map(|r| r.metrics.hd95));
    w.write_record(["mean".to_string(), fmt(d.0), fmt(c.0), fmt(h.0)]).map_err(csv_err)?;
    w.write_record(["std".to_string(), fmt(d.1), fmt(c.1), fmt(h.1)]).map_err(csv_err)?;
    w.flush().map_err(|e| PipelineError::io(out, e))
}

fn evaluate_pair(pred: &Path, gt: &Path, opts: MetricsOptions) -> Result<MetricsReport> {
    let p = load_nifti_mask(pred)?;
    let g = load_nifti_mask(gt)?;
    let spacing = if opts.voxel_units { Spacing::ISOTROPIC } else { g.spacing() };
    if !opts.voxel_units && p.spacing() != g.spacing() {
        log::warn!("{}: spacing differs from ground truth; using the ground-truth spacing", pred.display());
    }
    Ok(metrics_report(&p, &g, spacing, opts.aggregation)?)
}

/// Evaluates every stem present in both directories and writes the CSV to `out`.
pub fn run_metrics(pred_dir: &Path, gt_dir: &Path, out: &Path, opts: MetricsOptions) -> Result<MetricsRun> {
    let pred = stems(pred_dir)?;
    let gt = stems(gt_dir)?;
    let common: Vec<&String> = pred.keys().filter(|k| gt.contains_key(*k)).collect();
    if common.is_empty() {
        return Err(PipelineError::NoMatchingStems {
            pred: pred.keys().cloned().collect(),
            gt: gt.keys().cloned().collect(),
        });
    }
    let unmatched: Vec<String> =
        pred.keys().chain(gt.keys()).filter(|k| !(pred.contains_key(*k) && gt.contains_key(*k))).cloned().collect();
    if !unmatched.is_empty() {
        log::warn!("stems without a counterpart: {}", unmatched.join(", "));
    }

    let results: Vec<(String, Result<MetricsReport>)> =
        common.par_iter().map(|&id| (id.clone(), evaluate_pair(&pred[id], &gt[id], opts))).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(metrics) => {
                if metrics.hd95.is_none() {
                    log::warn!("{id}: empty mask, HD95 undefined");
                }
                rows.push(MetricsRow { subject_id: id, metrics });
            }
            Err(e) => {
                log::error!("{id}: {e}");
                skipped.push((id, e.to_string()));
            }
        }
    }
    write_metrics_csv(&rows, out)?;
    Ok(MetricsRun { rows, skipped, unmatched })
}

/// Paths of the five volumes a loss evaluation needs.
#[derive(Clone, Debug)]
pub struct LossInputs {
    pub pred_vei: PathBuf,
    pub target_vei: PathBuf,
    pub pred_seg: PathBuf,
    pub target_seg: PathBuf,
    pub input: PathBuf,
}

pub fn run_losses(inputs: &LossInputs, weights: &LossWeights) -> Result<LossReport> {
    let load = |p: &Path| -> Result<Volume3d> { Ok(load_nifti(p)?) };
    let pred_vei = load(&inputs.pred_vei)?;
    let target_vei = load(&inputs.target_vei)?;
    let pred_seg = load(&inputs.pred_seg)?;
    let target_seg = load_nifti_mask(&inputs.target_seg)?;
    let input = load(&inputs.input)?;
    Ok(loss_report(&pred_vei, &target_vei, &pred_seg, &target_seg, &input, weights)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let (m, s) = mean_std([1.0, 3.0, f64::NAN]);
        assert_eq!((m, s), (2.0, 1.0));
        assert!(mean_std([]).0.is_nan());
    }

    #[test]
    fn exit_codes() {
        let row = |hd95| MetricsRow { subject_id: "a".into(), metrics: MetricsReport { dice: 1.0, cldice: 1.0, hd95 } };
        let run = |rows, skipped: Vec<(String, String)>| MetricsRun { rows, skipped, unmatched: vec![] };
        assert_eq!(run(vec![row(Some(0.0))], vec![]).exit_code(), 0);
        assert_eq!(run(vec![row(None)], vec![]).exit_code(), 2);
        assert_eq!(run(vec![row(Some(0.0))], vec![("b".into(), "dims".into())]).exit_code(), 2);
        assert_eq!(run(vec![], vec![("b".into(), "dims".into())]).exit_code(), 1);
    }
}
