use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backends::BackendKind;
use crate::codebook::{Codebook, LabelVector};
use crate::parsing::{parse_single_line, FailureReason, ParseMode};
use crate::prompting::canonical_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostStatus {
    Pending,
    Classified,
    Failed,
}

/// One final outcome for a (label, repeat, post).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub label: String,
    pub repeat: u32,
    pub post_id: String,
    pub status: PostStatus,
    /// Canonical classification line when classified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Model calls made for this post, over all its prompts.
    pub attempts: u32,
    pub kind: BackendKind,
    pub cache_hits: u32,
    /// One per prompt (13 for per-theme templates).
    pub fingerprints: Vec<String>,
    /// Every raw response in call order.
    pub raw: Vec<String>,
}

impl ResultRecord {
    pub fn key(&self) -> (String, u32, String) {
        (self.label.clone(), self.repeat, self.post_id.clone())
    }

    pub fn set_labels(&mut self, v: &LabelVector) {
        self.labels = Some(canonical_line(v));
    }

    /// Decoded labels; `None` for failures.
    pub fn vector(&self, cb: &Codebook) -> Result<Option<LabelVector>, PipelineError> {
        match (&self.status, &self.labels) {
            (PostStatus::Classified, Some(line)) => parse_single_line(line, cb, ParseMode::Strict)
                .map(Some)
                .map_err(|f| {
                    PipelineError::Data(format!(
                        "stored labels for {} ({}) do not match the codebook: {f}",
                        self.post_id, self.label
                    ))
                }),
            (PostStatus::Classified, None) => Err(PipelineError::Data(format!(
                "classified record for {} has no labels",
                self.post_id
            ))),
            _ => Ok(None),
        }
    }
}

fn to_line(r: &ResultRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}

/// Result records of one run.
///
/// While classifying, records are appended to `results.partial.jsonl` in
/// completion order. Finalizing writes `results.jsonl` sorted by
/// (label, repeat, post id), keeping the last record per key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultsStore {
    records: BTreeMap<(String, u32, String), ResultRecord>,
}

pub const FINAL_FILE: &str = "results.jsonl";
pub const PARTIAL_FILE: &str = "results.partial.jsonl";

impl ResultsStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, r: ResultRecord) {
        self.records.insert(r.key(), r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ResultRecord> {
        self.records.values()
    }

    pub fn get(&self, label: &str, repeat: u32, post_id: &str) -> Option<&ResultRecord> {
        self.records.get(&(label.to_string(), repeat, post_id.to_string()))
    }

    pub fn labels(&self) -> Vec<String> {
        self.records.keys().map(|k| k.0.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn repeats(&self, label: &str) -> Vec<u32> {
        self.records
            .keys()
            .filter(|k| k.0 == label)
            .map(|k| k.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Records for one label and repeat, keyed by post id.
    pub fn run(&self, label: &str, repeat: u32) -> BTreeMap<&str, &ResultRecord> {
        self.records
            .iter()
            .filter(|(k, _)| k.0 == label && k.1 == repeat)
            .map(|(k, r)| (k.2.as_str(), r))
            .collect()
    }

    /// Per-post outcomes (`None` = failed) for one label and repeat.
    pub fn outcomes(
        &self,
        label: &str,
        repeat: u32,
        cb: &Codebook,
    ) -> Result<BTreeMap<String, Option<LabelVector>>, PipelineError> {
        self.run(label, repeat)
            .into_iter()
            .map(|(id, r)| Ok((id.to_string(), r.vector(cb)?)))
            .collect()
    }

    /// Parses JSON lines; a torn final line (interrupted write) is skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self, PipelineError> {
        let mut store = Self::new();
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<ResultRecord>(line) {
                Ok(r) => store.insert(r),
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {}
                Err(e) => {
                    return Err(PipelineError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))
                }
            }
        }
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Reads a finished store from a run directory or a results file.
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        if path.is_dir() {
            let file = path.join(FINAL_FILE);
            if !file.exists() {
                return Err(PipelineError::Data(format!(
                    "{} has no {FINAL_FILE}; the run is incomplete (resume it first)",
                    path.display()
                )));
            }
            Self::read(&file)
        } else {
            Self::read(path)
        }
    }

    /// Canonical serialization: one record per line in key order.
    pub fn to_jsonl(&self) -> String {
        self.records.values().map(|r| to_line(r) + "\n").collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Append handle for the partial store.
#[derive(Debug)]
pub struct PartialWriter {
    path: PathBuf,
    file: File,
}

impl PartialWriter {
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        // Drop a torn trailing line before appending after it.
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
            if !text.is_empty() && !text.ends_with('\n') {
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                write_atomic(path, &text.as_bytes()[..keep])?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, r: &ResultRecord) -> Result<(), PipelineError> {
        let line = to_line(r) + "\n";
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| PipelineError::io(&self.path, e))
    }
}

/// Per-unit status counts; a unit is one (label, repeat, post).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerCounts {
    pub classified: usize,
    pub failed: usize,
    pub pending: usize,
}

impl LedgerCounts {
    pub fn total(&self) -> usize {
        self.classified + self.failed + self.pending
    }
}

/// Status of every scheduled unit, written as `ledger.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    /// label → repeat → post id → status
    pub units: BTreeMap<String, BTreeMap<u32, BTreeMap<String, PostStatus>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<String>,
}

impl Ledger {
    pub fn schedule(&mut self, label: &str, repeat: u32, post_id: &str) {
        self.units
            .entry(label.to_string())
            .or_default()
            .entry(repeat)
            .or_default()
            .entry(post_id.to_string())
            .or_insert(PostStatus::Pending);
    }

    pub fn mark(&mut self, r: &ResultRecord) {
        if let Some(slot) = self
            .units
            .get_mut(&r.label)
            .and_then(|m| m.get_mut(&r.repeat))
            .and_then(|m| m.get_mut(&r.post_id))
        {
            *slot = r.status;
        }
    }

    pub fn status(&self, label: &str, repeat: u32, post_id: &str) -> Option<PostStatus> {
        self.units.get(label)?.get(&repeat)?.get(post_id).copied()
    }

    pub fn counts(&self) -> LedgerCounts {
        let mut c = LedgerCounts::default();
        for s in self.units.values().flat_map(|m| m.values()).flat_map(|m| m.values()) {
            match s {
                PostStatus::Pending => c.pending += 1,
                PostStatus::Classified => c.classified += 1,
                PostStatus::Failed => c.failed += 1,
            }
        }
        c
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(self).expect("ledger serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Writes via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}
