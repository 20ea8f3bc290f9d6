use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Lame,
}

impl Label {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Label::Normal
        } else {
            Label::Lame
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Lame => "lame",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One manifest line. `source` is a `.stvt` tensor file or a directory of
/// PNG frames; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub source: PathBuf,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_normal: usize,
    pub train_lame: usize,
    pub test_normal: usize,
    pub test_lame: usize,
}

impl SplitCounts {
    pub fn train(&self) -> usize {
        self.train_normal + self.train_lame
    }

    pub fn test(&self) -> usize {
        self.test_normal + self.test_lame
    }

    pub fn total(&self) -> usize {
        self.train() + self.test()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory that relative sources resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.source.is_absolute() {
            entry.source.clone()
        } else {
            self.root.join(&entry.source)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for e in &self.entries {
            let slot = match (e.split, e.label) {
                (Split::Train, Label::Normal) => &mut c.train_normal,
                (Split::Train, Label::Lame) => &mut c.train_lame,
                (Split::Test, Label::Normal) => &mut c.test_normal,
                (Split::Test, Label::Lame) => &mut c.test_lame,
            };
            *slot += 1;
        }
        c
    }

    /// Serialize as JSON Lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Parse manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, root: impl Into<PathBuf>) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
            record: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        if entry.id.is_empty() {
            return Err(Error::Manifest { record: format!("line {}", i + 1), message: "empty id".into() });
        }
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Manifest {
                record: format!("{:?} (line {})", entry.id, i + 1),
                message: "duplicate id".into(),
            });
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Manifest { record: "<file>".into(), message: "manifest has no records".into() });
    }
    Ok(DatasetManifest { root: root.into(), entries })
}

/// Load and validate a manifest; every referenced source must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, root)?;
    for e in &manifest.entries {
        let src = manifest.resolve(e);
        if !src.exists() {
            return Err(Error::Manifest {
                record: format!("{:?}", e.id),
                message: format!("source {} does not exist", src.display()),
            });
        }
    }
    Ok(manifest)
}
