//! Preprocessing configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! input_dir = "raw"
//! output_dir = "prep"
//! threads = "auto"        # or an integer
//! normalize = true
//! emit_mip = true
//!
//! [crop]
//! top_percent = 0.35
//! min_region_px = 200
//!
//! [frangi]
//! scales = [0.5, 1.0, 2.0, 4.0]
//! alpha = 0.5
//! beta = 0.5
//! c_scope = "per_scale"  # or "shared"
//!
//! [coarse]
//! top_percent = 0.05
//! k = 4
//! connectivity = 26
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vessel_core::coarse::{CoarseSegParams, Connectivity3};
use vessel_core::frangi::FrangiParams;
use vessel_core::projection::CropParams;

use crate::error::{PipelineError, Result};

/// Worker thread count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "ThreadsRepr", into = "ThreadsRepr")]
pub enum Threads {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThreadsRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<ThreadsRepr> for Threads {
    type Error = String;

    fn try_from(r: ThreadsRepr) -> std::result::Result<Self, String> {
        match r {
            ThreadsRepr::Count(0) => Err("threads must be at least 1".into()),
            ThreadsRepr::Count(n) => Ok(Threads::Fixed(n)),
            ThreadsRepr::Word(w) if w == "auto" => Ok(Threads::Auto),
            ThreadsRepr::Word(w) => Err(format!("threads must be \"auto\" or a count, got {w:?}")),
        }
    }
}

impl From<Threads> for ThreadsRepr {
    fn from(t: Threads) -> Self {
        match t {
            Threads::Auto => ThreadsRepr::Word("auto".into()),
            Threads::Fixed(n) => ThreadsRepr::Count(n),
        }
    }
}

impl Threads {
    pub fn resolve(self) -> usize {
        match self {
            Threads::Fixed(n) => n,
            Threads::Auto => std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Optional `subject_id,relative_path` list; otherwise `input_dir` is scanned.
    pub manifest: Option<PathBuf>,
    pub crop: CropParams,
    pub frangi: FrangiParams,
    pub coarse: CoarseSegParams,
    pub normalize: bool,
    pub emit_mip: bool,
    /// Also write the per-scale vesselness volumes.
    pub emit_per_scale: bool,
    pub threads: Threads,
    /// Subjects processed concurrently; default is derived from threads and available memory.
    pub max_parallel_subjects: Option<usize>,
    pub overwrite: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_dir: PathBuf::from("input"),
            output_dir: PathBuf::from("output"),
            manifest: None,
            crop: CropParams::default(),
            frangi: FrangiParams::default(),
            coarse: CoarseSegParams::default(),
            normalize: true,
            emit_mip: true,
            emit_per_scale: false,
            threads: Threads::Auto,
            max_parallel_subjects: None,
            overwrite: false,
        }
    }
}

/// Values given on the command line; each `Some` replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub input_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub crop_percent: Option<f64>,
    pub min_region: Option<usize>,
    pub frangi_scales: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub coarse_percent: Option<f64>,
    pub components: Option<usize>,
    pub connectivity: Option<Connectivity3>,
    pub threads: Option<usize>,
    pub overwrite: bool,
    pub no_normalize: bool,
    pub no_mip: bool,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config { path: origin.to_path_buf(), reason: e.to_string() })
    }

    /// Reads a config file; relative directories resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input_dir, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(m) = cfg.manifest.as_mut().filter(|m| m.is_relative()) {
            *m = base.join(&*m);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        if let Some(v) = &o.input_dir {
            self.input_dir = v.clone();
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.manifest {
            self.manifest = Some(v.clone());
        }
        if let Some(v) = o.crop_percent {
            self.crop.top_percent = v;
        }
        if let Some(v) = o.min_region {
            self.crop.min_region_px = v;
        }
        if let Some(v) = &o.frangi_scales {
            self.frangi.scales = v.clone();
        }
        if let Some(v) = o.alpha {
            self.frangi.alpha = v;
        }
        if let Some(v) = o.beta {
            self.frangi.beta = v;
        }
        if let Some(v) = o.coarse_percent {
            self.coarse.top_percent = v;
        }
        if let Some(v) = o.components {
            self.coarse.k = v;
        }
        if let Some(v) = o.connectivity {
            self.coarse.connectivity = v;
        }
        if let Some(v) = o.threads {
            self.threads = Threads::Fixed(v);
        }
        self.overwrite |= o.overwrite;
        self.normalize &= !o.no_normalize;
        self.emit_mip &= !o.no_mip;
    }

    pub fn validate(&self) -> Result<()> {
        let same = match (self.input_dir.canonicalize(), self.output_dir.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => self.input_dir == self.output_dir,
        };
        if same {
            return Err(PipelineError::InvalidConfig(format!(
                "input and output directories must differ ({})",
                self.input_dir.display()
            )));
        }
        if self.threads == Threads::Fixed(0) || self.max_parallel_subjects == Some(0) {
            return Err(PipelineError::InvalidConfig("thread and subject counts must be at least 1".into()));
        }
        if self.frangi.scales.len() > u8::MAX as usize {
            return Err(PipelineError::InvalidConfig("at most 255 Frangi scales are supported".into()));
        }
        self.crop.validate()?;
        self.frangi.validate()?;
        self.coarse.validate()?;
        Ok(())
    }
}
