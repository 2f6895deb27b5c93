//! Cropping-rate statistics over a batch of sidecars.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vessel_core::projection::CropSidecar;

use crate::error::{PipelineError, Result};

pub const HISTOGRAM_BINS: usize = 20;
pub const DEFAULT_CR_THRESHOLD: f64 = 0.3849;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, 1]`; each bin is half-open except the last, which includes 1.
pub fn cr_histogram(values: &[f64]) -> Vec<HistogramBin> {
    let edge = |i: usize| i as f64 / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> =
        (0..HISTOGRAM_BINS).map(|i| HistogramBin { bin_low: edge(i), bin_high: edge(i + 1), count: 0 }).collect();
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            continue;
        }
        let mut i = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        // settle rounding of v * bins against the printed edges
        while i > 0 && v < bins[i].bin_low {
            i -= 1;
        }
        while i + 1 < HISTOGRAM_BINS && v >= bins[i].bin_high {
            i += 1;
        }
        bins[i].count += 1;
    }
    bins
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrSummary {
    pub subjects: usize,
    pub mean: f64,
    pub median: f64,
    pub threshold: f64,
    pub fraction_at_or_above: f64,
    pub histogram: Vec<HistogramBin>,
}

pub fn summarize(values: &[f64], threshold: f64) -> Option<CrSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Some(CrSummary {
        subjects: n,
        mean: values.iter().sum::<f64>() / n as f64,
        median,
        threshold,
        fraction_at_or_above: values.iter().filter(|&&v| v >= threshold).count() as f64 / n as f64,
        histogram: cr_histogram(values),
    })
}

/// Sidecars under `path`: its `sidecar/` subdirectory if present, else `path` itself.
pub fn read_sidecars(path: &Path) -> Result<Vec<CropSidecar>> {
    let dir = if path.join("sidecar").is_dir() { path.join("sidecar") } else { path.to_path_buf() };
    let rd = std::fs::read_dir(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| PipelineError::io(&f, e))?;
        match serde_json::from_str::<CropSidecar>(&text) {
            Ok(s) => out.push(s),
            Err(e) => log::warn!("skipping {}: not a crop sidecar ({e})", f.display()),
        }
    }
    if out.is_empty() {
        return Err(PipelineError::NoSidecars(dir));
    }
    Ok(out)
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_low,bin_high,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.bin_low, b.bin_high, b.count);
    }
    s
}

pub fn summary_text(s: &CrSummary) -> String {
    format!(
        "subjects: {}\nmean_cr: {:.6}\nmedian_cr: {:.6}\nfraction_cr_at_or_above_{}: {:.6}\n",
        s.subjects, s.mean, s.median, s.threshold, s.fraction_at_or_above
    )
}

/// Writes `cr_histogram.csv` and `cr_summary.txt` into `out_dir` (default: `dir`).
pub fn run_report(dir: &Path, threshold: f64, out_dir: Option<&Path>) -> Result<CrSummary> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PipelineError::InvalidConfig(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let sidecars = read_sidecars(dir)?;
    let crs: Vec<f64> = sidecars.iter().map(|s| s.cr).collect();
    let summary = summarize(&crs, threshold).expect("nonempty");
    let out = out_dir.unwrap_or(dir);
    std::fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    for (name, body) in
        [("cr_histogram.csv", histogram_csv(&summary.histogram)), ("cr_summary.txt", summary_text(&summary))]
    {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| PipelineError::io(&p, e))?;
    }
    log::info!("{} sidecars, mean CR {:.4}", summary.subjects, summary.mean);
    Ok(summary)
}
