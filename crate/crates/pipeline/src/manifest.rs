//! Subject lists: a directory scan of NIfTI files or an explicit manifest file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    /// Relative to the input directory.
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubjectManifest {
    pub entries: Vec<SubjectEntry>,
}

/// `name.nii` or `name.nii.gz` to `name`.
pub fn nifti_stem(file_name: &str) -> Option<&str> {
    file_name.strip_suffix(".nii.gz").or_else(|| file_name.strip_suffix(".nii")).filter(|s| !s.is_empty())
}

impl SubjectManifest {
    /// All `*.nii` / `*.nii.gz` files directly under `dir`, sorted by file name.
    pub fn scan(dir: &Path) -> Result<Self> {
        let rd = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
        let mut names = Vec::new();
        for ent in rd {
            let ent = ent.map_err(|e| PipelineError::io(dir, e))?;
            if !ent.file_type().map_err(|e| PipelineError::io(ent.path(), e))?.is_file() {
                continue;
            }
            if let Some(name) = ent.file_name().to_str() {
                if nifti_stem(name).is_some() {
                    names.push(name.to_owned());
                }
            }
        }
        names.sort();
        let entries = names
            .into_iter()
            .map(|n| SubjectEntry { subject_id: nifti_stem(&n).unwrap().to_owned(), path: PathBuf::from(n) })
            .collect();
        let m = Self { entries };
        m.check_unique()?;
        Ok(m)
    }

    /// Parses `subject_id,relative_path` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, path) = line
                .split_once(',')
                .map(|(a, b)| (a.trim(), b.trim()))
                .filter(|(a, b)| !a.is_empty() && !b.is_empty())
                .ok_or_else(|| {
                    PipelineError::Manifest(format!("line {}: expected `subject_id,path`, got {line:?}", no + 1))
                })?;
            if no == 0 && id == "subject_id" {
                continue;
            }
            if id.contains(['/', '\\']) {
                return Err(PipelineError::Manifest(format!(
                    "line {}: subject id {id:?} contains a path separator",
                    no + 1
                )));
            }
            entries.push(SubjectEntry { subject_id: id.to_owned(), path: PathBuf::from(path) });
        }
        let m = Self { entries };
        m.check_unique()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let dup: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| !seen.insert(e.subject_id.as_str()))
            .map(|e| e.subject_id.as_str())
            .collect();
        if dup.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Manifest(format!("duplicate subject ids: {}", dup.join(", "))))
        }
    }

    /// Every entry must exist under `input_dir`.
    pub fn check_paths(&self, input_dir: &Path) -> Result<()> {
        let missing: Vec<String> = self
            .entries
            .iter()
            .map(|e| input_dir.join(&e.path))
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Manifest(format!("missing input files: {}", missing.join(", "))))
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
