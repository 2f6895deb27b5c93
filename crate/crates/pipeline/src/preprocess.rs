//! Batch preprocessing: crop, enhance and coarsely segment every subject.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vessel_core::coarse::coarse_segmentation_detailed;
use vessel_core::frangi::frangi_multiscale_detailed;
use vessel_core::nifti::{load_nifti, save_nifti, save_nifti_image, save_nifti_mask};
use vessel_core::projection::{crop_pipeline, z_projections, CropSidecar};
use vessel_core::volume::{minmax_normalize, CropBox};
use vessel_core::Volume3;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::manifest::{SubjectEntry, SubjectManifest};
use crate::report::{cr_histogram, HistogramBin};

/// Working-set estimate for one 448x448x128 subject, used to bound concurrency.
const SUBJECT_WORKING_SET: u64 = 3 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub status: SubjectStatus,
    pub error: Option<String>,
    pub orig_dims: Option<[usize; 3]>,
    pub crop_box: Option<CropBox>,
    pub cr: Option<f64>,
    pub cropped_path: Option<PathBuf>,
    pub vei_path: Option<PathBuf>,
    pub cvs_path: Option<PathBuf>,
    pub mip_path: Option<PathBuf>,
    pub sidecar_path: Option<PathBuf>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub subjects: usize,
    pub failures: usize,
    pub mean_cr: Option<f64>,
    pub cr_histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<SubjectRecord>,
    pub aggregate: RunAggregate,
}

impl RunReport {
    fn new(records: Vec<SubjectRecord>) -> Self {
        let crs: Vec<f64> = records.iter().filter_map(|r| r.cr).collect();
        let aggregate = RunAggregate {
            subjects: records.len(),
            failures: records.iter().filter(|r| r.status == SubjectStatus::Failed).count(),
            mean_cr: (!crs.is_empty()).then(|| crs.iter().sum::<f64>() / crs.len() as f64),
            cr_histogram: cr_histogram(&crs),
        };
        Self { records, aggregate }
    }

    /// 0 when every subject succeeded, 1 when all failed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.aggregate.failures {
            0 => 0,
            f if f == self.aggregate.subjects => 1,
            _ => 2,
        }
    }
}

/// Where one subject's artifacts go.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputPaths {
    pub cropped: PathBuf,
    pub vei: PathBuf,
    pub cvs: PathBuf,
    pub mip: Option<PathBuf>,
    pub sidecar: PathBuf,
    pub per_scale: Vec<PathBuf>,
}

impl OutputPaths {
    pub fn new(cfg: &PipelineConfig, subject_id: &str) -> Self {
        let kind = |k: &str, ext: &str| cfg.output_dir.join(k).join(format!("{subject_id}.{ext}"));
        Self {
            cropped: kind("cropped", "nii.gz"),
            vei: kind("vei", "nii.gz"),
            cvs: kind("cvs", "nii.gz"),
            mip: cfg.emit_mip.then(|| kind("mip", "nii.gz")),
            sidecar: kind("sidecar", "json"),
            per_scale: if cfg.emit_per_scale {
                (0..cfg.frangi.scales.len())
                    .map(|i| cfg.output_dir.join("vei_scales").join(format!("{subject_id}_s{i}.nii.gz")))
                    .collect()
            } else {
                Vec::new()
            },
        }
    }

    fn all(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.cropped, &self.vei, &self.cvs, &self.sidecar].into_iter().chain(self.mip.as_ref()).chain(&self.per_scale)
    }
}

fn mem_available() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Concurrent subjects: at most `threads`, and at most what memory allows.
pub fn subject_concurrency(cfg: &PipelineConfig, threads: usize) -> usize {
    if let Some(n) = cfg.max_parallel_subjects {
        return n.min(threads).max(1);
    }
    let by_memory = mem_available().map_or(threads, |m| (m / (2 * SUBJECT_WORKING_SET)) as usize);
    threads.min(by_memory).max(1)
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

struct Processed {
    sidecar: CropSidecar,
    warnings: Vec<String>,
}

fn process_subject(cfg: &PipelineConfig, entry: &SubjectEntry, out: &OutputPaths) -> Result<Processed> {
    let mut warnings = Vec::new();
    let mut warn = |msg: String| {
        log::warn!("{}: {msg}", entry.subject_id);
        warnings.push(msg);
    };
    let src = cfg.input_dir.join(&entry.path);
    let raw: Volume3 = load_nifti(&src)?;
    let orig = raw.dims();
    let vol = if cfg.normalize {
        match minmax_normalize(&raw) {
            Ok(v) => v,
            Err(vessel_core::Error::Degenerate(m)) => {
                warn(format!("{m}; continuing without normalization"));
                raw
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        raw
    };

    let crop = crop_pipeline(&vol, &cfg.crop)?;
    drop(vol);
    if crop.fell_back_to_full {
        warn("crop mask empty after region removal; used the full extent".into());
    }
    let frangi = frangi_multiscale_detailed(&crop.cropped, &cfg.frangi, cfg.emit_per_scale)?;
    let coarse = coarse_segmentation_detailed(&frangi.vei, &cfg.coarse)?;
    if coarse.degenerate {
        warn("VEI threshold kept every voxel".into());
    }
    if coarse.cvs.is_empty() {
        warn("coarse segmentation is empty".into());
    }

    save_nifti(&crop.cropped, &out.cropped)?;
    save_nifti(&frangi.vei, &out.vei)?;
    save_nifti_mask(&coarse.cvs, &out.cvs)?;
    if let Some(p) = &out.mip {
        let mip = z_projections(&frangi.vei).mip;
        save_nifti_image(&mip, frangi.vei.spacing(), frangi.vei.meta(), p)?;
    }
    for (v, p) in frangi.per_scale.iter().zip(&out.per_scale) {
        save_nifti(v, p)?;
    }
    let sidecar = CropSidecar::new(entry.subject_id.clone(), orig, crop.crop_box)?;
    save_json(&sidecar, &out.sidecar)?;
    Ok(Processed { sidecar, warnings })
}

fn run_one(cfg: &PipelineConfig, entry: &SubjectEntry) -> SubjectRecord {
    let start = Instant::now();
    let out = OutputPaths::new(cfg, &entry.subject_id);
    let result = catch_unwind(AssertUnwindSafe(|| process_subject(cfg, entry, &out))).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(PipelineError::Panicked(msg.unwrap_or_default()))
    });
    let wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(p) => {
            log::info!("{}: done in {wall_time_s:.1}s, CR {:.4}", entry.subject_id, p.sidecar.cr);
            SubjectRecord {
                subject_id: entry.subject_id.clone(),
                status: SubjectStatus::Ok,
                error: None,
                orig_dims: Some(p.sidecar.orig_dims),
                crop_box: Some(p.sidecar.crop_box),
                cr: Some(p.sidecar.cr),
                cropped_path: Some(out.cropped),
                vei_path: Some(out.vei),
                cvs_path: Some(out.cvs),
                mip_path: out.mip,
                sidecar_path: Some(out.sidecar),
                warnings: p.warnings,
                wall_time_s,
            }
        }
        Err(e) => {
            log::error!("{}: {e}", entry.subject_id);
            SubjectRecord {
                subject_id: entry.subject_id.clone(),
                status: SubjectStatus::Failed,
                error: Some(e.to_string()),
                orig_dims: None,
                crop_box: None,
                cr: None,
                cropped_path: None,
                vei_path: None,
                cvs_path: None,
                mip_path: None,
                sidecar_path: None,
                warnings: Vec::new(),
                wall_time_s,
            }
        }
    }
}

pub fn load_manifest(cfg: &PipelineConfig) -> Result<SubjectManifest> {
    let m = match &cfg.manifest {
        Some(p) => SubjectManifest::load(p)?,
        None => SubjectManifest::scan(&cfg.input_dir)?,
    };
    if m.is_empty() {
        return Err(PipelineError::EmptyManifest(cfg.manifest.clone().unwrap_or_else(|| cfg.input_dir.clone())));
    }
    m.check_paths(&cfg.input_dir)?;
    Ok(m)
}

/// Runs every subject; per-subject failures are recorded, not propagated.
///
/// The run report (with timings) is also written to `output_dir/run_report.json`.
pub fn run_preprocess(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    if !cfg.overwrite {
        let existing: Vec<PathBuf> = manifest
            .entries
            .iter()
            .flat_map(|e| OutputPaths::new(cfg, &e.subject_id).all().cloned().collect::<Vec<_>>())
            .filter(|p| p.exists())
            .collect();
        if !existing.is_empty() {
            return Err(PipelineError::OutputCollision(existing));
        }
    }

    let threads = cfg.threads.resolve();
    let workers = subject_concurrency(cfg, threads);
    log::info!("{} subjects, {threads} threads, {workers} concurrent", manifest.len());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let records: Vec<SubjectRecord> = pool.install(|| {
        manifest
            .entries
            .chunks(workers)
            .flat_map(|chunk| chunk.par_iter().map(|e| run_one(cfg, e)).collect::<Vec<_>>())
            .collect()
    });

    let report = RunReport::new(records);
    save_json(&report, &cfg.output_dir.join("run_report.json"))?;
    Ok(report)
}
