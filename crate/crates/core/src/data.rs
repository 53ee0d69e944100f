//! Dataset ingestion: precomputed raw feature vectors, one JSON record
//! per line, plus the sidecar class-name list.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LatteError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = LatteError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(LatteError::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image_id: String,
    pub features: Vec<f64>,
    pub gt_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub domain: String,
    pub class_names: Vec<String>,
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        domain: impl Into<String>,
        class_names: Vec<String>,
        split: Split,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            domain: domain.into(),
            class_names,
            split,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(LatteError::Config("need at least two classes".into()));
        }
        let mut names = HashSet::new();
        for n in &self.class_names {
            if n.is_empty() {
                return Err(LatteError::Config("empty class name".into()));
            }
            if !names.insert(n) {
                return Err(LatteError::Config(format!("duplicate class name `{n}`")));
            }
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(&s.image_id) {
                return Err(LatteError::Config(format!(
                    "duplicate image id `{}` in {} split",
                    s.image_id, self.split
                )));
            }
            if let Some(gt) = s.gt_label {
                if gt >= self.class_names.len() {
                    return Err(LatteError::ClassIndexOutOfRange {
                        index: gt,
                        num_classes: self.class_names.len(),
                    });
                }
            } else if self.split == Split::Test {
                return Err(LatteError::Config(format!(
                    "test sample `{}` lacks a ground-truth label",
                    s.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn save_samples(samples: &[Sample], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// One class name per line; index = line number.
pub fn save_class_names(names: &[String], path: &Path) -> Result<()> {
    std::fs::write(path, names.join("\n") + "\n")?;
    Ok(())
}

pub fn load_class_names(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let names: Vec<String> = text.lines().map(|l| l.to_string()).filter(|l| !l.is_empty()).collect();
    if names.is_empty() {
        return Err(LatteError::Config(format!(
            "no class names in {}",
            path.display()
        )));
    }
    Ok(names)
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Sidecar metadata for a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub domain: String,
    pub format_version: u32,
}

/// Writes `{split}.jsonl`, `class_names.txt` and `meta.json` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(dir)?;
    save_samples(&ds.samples, &dir.join(format!("{}.jsonl", ds.split)))?;
    save_class_names(&ds.class_names, &dir.join("class_names.txt"))?;
    let meta = DatasetMeta {
        name: ds.name.clone(),
        domain: ds.domain.clone(),
        format_version: DATASET_FORMAT_VERSION,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Loads one split from a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(
        |_| LatteError::MissingArtifact {
            artifact: format!("dataset metadata {}", meta_path.display()),
            produced_by: "make-toy".into(),
        },
    )?)?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(LatteError::FormatVersion {
            file: meta_path.display().to_string(),
            expected: DATASET_FORMAT_VERSION,
            found: meta.format_version,
        });
    }
    let class_names = load_class_names(&dir.join("class_names.txt"))?;
    let split_path = dir.join(format!("{split}.jsonl"));
    let samples = load_samples(&split_path).map_err(|e| match e {
        LatteError::Io(_) => LatteError::MissingArtifact {
            artifact: format!("dataset split {}", split_path.display()),
            produced_by: "make-toy".into(),
        },
        other => other,
    })?;
    Dataset::new(meta.name, meta.domain, class_names, split, samples)
}
