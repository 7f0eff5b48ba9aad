//! Dataset manifests: a label set plus per-image tensor paths tagged by split.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::maps::{LabelMap, LabelSet, ProbabilityMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Images whose statistics feed confusion estimation.
    Estimation,
    /// Images that are refined and scored.
    Evaluation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Estimation => "estimation",
            Split::Evaluation => "evaluation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub probs: PathBuf,
    pub gt: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub labels: LabelSet,
    pub records: Vec<Record>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    base_dir: PathBuf,
}

/// One image's tensors, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub id: String,
    pub probs: ProbabilityMap,
    pub gt: LabelMap,
}

impl Manifest {
    pub fn new(
        labels: LabelSet,
        records: Vec<Record>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let m = Self {
            labels,
            records,
            base_dir: base_dir.into(),
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        self.labels
            .check()
            .map_err(|e| Error::InvalidManifest(e.to_string()))?;
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate image id {:?}",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check()?;
        Ok(m)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Like [`Manifest::split`] but errors when the split is empty.
    pub fn require_split(&self, split: Split) -> Result<Vec<&Record>> {
        let recs: Vec<&Record> = self.split(split).collect();
        if recs.is_empty() {
            return Err(Error::EmptySplit(split.name()));
        }
        Ok(recs)
    }

    pub fn load_gt(&self, record: &Record) -> Result<LabelMap> {
        let gt = LabelMap::load(self.resolve(&record.gt))?;
        gt.check_labels(&self.labels)
            .map_err(|e| Error::InvalidManifest(format!("{}: {e}", record.id)))?;
        Ok(gt)
    }

    /// Loads both tensors and checks they agree with each other and the label set.
    pub fn load_image(&self, record: &Record, tol: f64) -> Result<LoadedImage> {
        let probs = ProbabilityMap::load(self.resolve(&record.probs), tol)?;
        let gt = self.load_gt(record)?;
        if probs.channels() != self.labels.size() {
            return Err(Error::InvalidManifest(format!(
                "{}: probability map has {} channels, label set has {}",
                record.id,
                probs.channels(),
                self.labels.size()
            )));
        }
        if !gt.same_dims(probs.height(), probs.width()) {
            return Err(Error::InvalidManifest(format!(
                "{}: ground truth is {}x{}, probabilities {}x{}",
                record.id,
                gt.height(),
                gt.width(),
                probs.height(),
                probs.width()
            )));
        }
        Ok(LoadedImage {
            id: record.id.clone(),
            probs,
            gt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_format() {
        let json = r#"{
            "labels": {"size": 3, "names": ["a", "b", "c"], "void_id": 255},
            "records": [
                {"id": "x", "probs": "x.probs.segt", "gt": "x.gt.segt", "split": "estimation"},
                {"id": "y", "probs": "y.probs.segt", "gt": "y.gt.segt", "split": "evaluation"}
            ]
        }"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, json).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.labels.size(), 3);
        assert_eq!(m.labels.void_id(), Some(255));
        assert_eq!(m.split(Split::Evaluation).count(), 1);
        assert_eq!(
            m.resolve(Path::new("x.gt.segt")),
            dir.path().join("x.gt.segt")
        );
    }

    #[test]
    fn null_void_and_missing_names() {
        let json = r#"{"labels": {"size": 2, "void_id": null}, "records": []}"#;
        let m: Manifest = serde_json::from_str(json).unwrap();
        assert_eq!(m.labels.void_id(), None);
        assert!(m.labels.names().is_none());
        assert!(matches!(
            m.require_split(Split::Estimation),
            Err(Error::EmptySplit("estimation"))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rec = Record {
            id: "a".into(),
            probs: "p".into(),
            gt: "g".into(),
            split: Split::Estimation,
        };
        let err = Manifest::new(LabelSet::plain(2).unwrap(), vec![rec.clone(), rec], ".");
        assert!(matches!(err, Err(Error::InvalidManifest(_))));
    }

    #[test]
    fn load_image_checks_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let probs = ProbabilityMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        probs.store(dir.path().join("p.segt")).unwrap();
        LabelMap::new(2, 1, vec![0, 1])
            .unwrap()
            .store(dir.path().join("g.segt"))
            .unwrap();
        let rec = Record {
            id: "a".into(),
            probs: "p.segt".into(),
            gt: "g.segt".into(),
            split: Split::Evaluation,
        };
        let m = Manifest::new(LabelSet::plain(2).unwrap(), vec![rec.clone()], dir.path()).unwrap();
        assert!(matches!(
            m.load_image(&rec, 1e-4),
            Err(Error::InvalidManifest(_))
        ));
    }
}
