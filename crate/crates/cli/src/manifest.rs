use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn of(path: &Path, shown: String) -> Result<Self> {
        let data = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self {
            path: shown,
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputError {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRecord {
    pub name: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<FileEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// Seconds since the Unix epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub generated_at: u64,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub input_errors: Vec<InputError>,
    pub analyses: Vec<AnalysisRecord>,
}

impl Manifest {
    pub fn succeeded(&self) -> bool {
        self.input_errors.is_empty() && self.analyses.iter().all(|a| a.status == "ok")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return epoch;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Output files of one analysis, recorded as they are written so that a
/// failing analysis still lists what it produced.
pub struct Outputs {
    root: PathBuf,
    written: Mutex<Vec<String>>,
}

impl Outputs {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Mutex::new(Vec::new()),
        }
    }

    /// Create `rel` under the output root and fill it through `fill`.
    pub fn file(&self, rel: &str, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = std::io::BufWriter::new(file);
        fill(&mut out).with_context(|| format!("writing {}", path.display()))?;
        out.flush()?;
        self.written.lock().unwrap().push(rel.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.file(rel, |out| out.write_all(text.as_bytes()))
    }

    pub fn entries(&self) -> Result<Vec<FileEntry>> {
        let mut names = self.written.lock().unwrap().clone();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .map(|rel| FileEntry::of(&self.root.join(&rel), rel))
            .collect()
    }
}
