//! Line-delimited dataset manifests.
//!
//! Tab-separated columns, in order:
//!
//! ```text
//! id  image  landmarks  label  [cohort]  [split]
//! ```
//!
//! `image` and `landmarks` are paths relative to the manifest's directory;
//! `landmarks` names an annotation file holding a record for `image`.
//! Optional columns may be omitted or written as `-`. `split` is one of
//! `train`, `val`, `test`. Lines starting with `#` are comments, except the
//! directive `#classes<TAB>A<TAB>B...`, which declares the label set; when
//! present every label must belong to it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GestaltError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    pub landmarks: String,
    pub label: String,
    pub cohort: Option<String>,
    pub split: Option<Split>,
}

/// Validated, immutable set of records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    root: PathBuf,
    records: Vec<SampleRecord>,
    classes: Vec<String>,
    declared: bool,
}

const DIRECTIVE: &str = "#classes";

fn field(s: &str) -> Option<String> {
    (!s.is_empty() && s != "-").then(|| s.to_owned())
}

impl Dataset {
    /// Builds a dataset, inferring the class set (sorted) unless `declared`
    /// is given.
    pub fn new(root: PathBuf, records: Vec<SampleRecord>, declared: Option<Vec<String>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(GestaltError::DuplicateId(r.id.clone()));
            }
        }
        let is_declared = declared.is_some();
        let classes = match declared {
            Some(d) => {
                let set: BTreeSet<_> = d.iter().collect();
                if set.len() != d.len() {
                    return Err(GestaltError::InvalidArgument("repeated class in declaration".into()));
                }
                if let Some(r) = records.iter().find(|r| !set.contains(&r.label)) {
                    return Err(GestaltError::UnknownLabel {
                        id: r.id.clone(),
                        label: r.label.clone(),
                    });
                }
                d
            }
            None => records
                .iter()
                .map(|r| r.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        Ok(Self {
            root,
            records,
            classes,
            declared: is_declared,
        })
    }

    pub fn parse(text: &str, root: PathBuf, origin: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut declared = None;
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            let err = |msg: String| GestaltError::Parse {
                path: origin.to_owned(),
                line: i + 1,
                msg,
            };
            if let Some(rest) = line.strip_prefix(DIRECTIVE) {
                if declared.is_some() {
                    return Err(err("class set declared twice".into()));
                }
                let names: Vec<String> = rest
                    .split('\t')
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect();
                declared = Some(names);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(4..=6).contains(&cols.len()) {
                return Err(err(format!("expected 4 to 6 tab-separated columns, got {}", cols.len())));
            }
            for (name, v) in ["id", "image", "landmarks", "label"].iter().zip(&cols) {
                if v.is_empty() {
                    return Err(err(format!("empty {name}")));
                }
            }
            if !seen.insert(cols[0].to_owned()) {
                return Err(GestaltError::DuplicateId(cols[0].to_owned()));
            }
            let split = match cols.get(5).copied().and_then(field) {
                Some(s) => Some(s.parse::<Split>().map_err(err)?),
                None => None,
            };
            records.push(SampleRecord {
                id: cols[0].to_owned(),
                image: cols[1].to_owned(),
                landmarks: cols[2].to_owned(),
                label: cols[3].to_owned(),
                cohort: cols.get(4).copied().and_then(field),
                split,
            });
        }
        Self::new(root, records, declared)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GestaltError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, &path.display().to_string())
    }

    /// Serializes back to manifest text.
    pub fn to_manifest(&self) -> String {
        let mut out = String::from("# id\timage\tlandmarks\tlabel\tcohort\tsplit\n");
        if self.declared {
            out.push_str(DIRECTIVE);
            for c in &self.classes {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\n');
        }
        for r in &self.records {
            let split = r.split.map_or_else(|| "-".to_owned(), |s| s.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.image,
                r.landmarks,
                r.label,
                r.cohort.as_deref().unwrap_or("-"),
                split
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest()).map_err(|e| GestaltError::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.classes.iter().map(|c| (c.clone(), 0)).collect();
        for r in &self.records {
            *counts.entry(r.label.clone()).or_default() += 1;
        }
        counts
    }

    /// Records satisfying `keep`, sharing this dataset's class set.
    pub fn filter(&self, keep: impl Fn(&SampleRecord) -> bool) -> Self {
        Self {
            root: self.root.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            classes: self.classes.clone(),
            declared: self.declared,
        }
    }

    pub fn with_split(&self, split: Split) -> Self {
        self.filter(|r| r.split == Some(split))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}
