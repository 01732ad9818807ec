use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::Demonstration;
use super::storage::{load_demo, read_summary};
use crate::error::{Error, Result};
use crate::sim::{TaskKind, TaskSpec, WaterFraction};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pretrain,
    Finetune,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory when it was saved there.
    pub file: PathBuf,
    pub task: String,
    pub records: usize,
    pub success: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Demos per task label.
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
}

/// Demos per task in the fine-tuning set.
pub fn finetune_recipe() -> Vec<(TaskSpec, usize)> {
    let mut r = vec![
        (TaskSpec::new(TaskKind::Navigation, WaterFraction::OneHalf), 12),
        (TaskSpec::new(TaskKind::Rotation, WaterFraction::OneHalf), 20),
    ];
    for w in WaterFraction::ALL {
        r.push((TaskSpec::new(TaskKind::ViewAdjustment, w), 10));
    }
    for w in WaterFraction::ALL {
        r.push((TaskSpec::new(TaskKind::ViewRotation, w), 5));
    }
    r
}

/// Lists the given demo files. Every file must exist and parse.
pub fn build_manifest(files: &[PathBuf], split: Split) -> Result<Manifest> {
    if files.is_empty() {
        return Err(Error::validation("no demonstrations for the manifest"));
    }
    let mut entries = Vec::with_capacity(files.len());
    let mut counts = BTreeMap::new();
    for f in files {
        let s = read_summary(f)?;
        let task = s.task.label();
        *counts.entry(task.clone()).or_insert(0) += 1;
        entries.push(ManifestEntry {
            file: f.clone(),
            task,
            records: s.records,
            success: s.success,
            flagged: s.flagged,
        });
    }
    Ok(Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        split,
        total: entries.len(),
        entries,
        counts,
    })
}

/// Picks the first unflagged demos of each task in `recipe` order.
pub fn manifest_from_recipe(files: &[PathBuf], recipe: &[(TaskSpec, usize)], split: Split) -> Result<Manifest> {
    let all = build_manifest(files, split)?;
    let mut picked = Vec::new();
    for (task, n) in recipe {
        let label = task.label();
        let found: Vec<PathBuf> = all
            .entries
            .iter()
            .filter(|e| e.task == label && !e.flagged)
            .take(*n)
            .map(|e| e.file.clone())
            .collect();
        if found.len() < *n {
            return Err(Error::validation(format!(
                "recipe wants {n} demos of {label}, found {}",
                found.len()
            )));
        }
        picked.extend(found);
    }
    build_manifest(&picked, split)
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(s)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported manifest version {}",
                m.format_version
            )));
        }
        if m.total != m.entries.len() || m.counts.values().sum::<usize>() != m.total {
            return Err(Error::validation("manifest counts disagree with its entries"));
        }
        Ok(m)
    }

    /// Stores entries relative to the manifest's directory when possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut m = self.clone();
        for e in &mut m.entries {
            if let Ok(rel) = e.file.strip_prefix(dir) {
                e.file = rel.to_path_buf();
            }
        }
        fs::write(path, m.to_json()?)?;
        Ok(())
    }

    /// Resolves relative entries against the manifest's directory and checks
    /// that every file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut m = Self::from_json(&fs::read_to_string(path)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.file.is_relative() {
                e.file = dir.join(&e.file);
            }
            if !e.file.exists() {
                return Err(Error::MissingFile(e.file.clone()));
            }
        }
        Ok(m)
    }

    pub fn files(&self) -> Vec<PathBuf> {
        self.entries.iter().map(|e| e.file.clone()).collect()
    }

    pub fn load_demos(&self) -> Result<Vec<Demonstration>> {
        self.entries.par_iter().map(|e| load_demo(&e.file)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_total() {
        assert_eq!(finetune_recipe().iter().map(|(_, n)| n).sum::<usize>(), 77);
    }

    #[test]
    fn empty_and_missing_are_errors() {
        assert!(build_manifest(&[], Split::Finetune).is_err());
        let err = build_manifest(&[PathBuf::from("/nope/a.jsonl")], Split::Eval).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
