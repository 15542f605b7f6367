use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::store::write_atomic;
use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| PipelineError::io(path, e))
}

/// Frozen description of a run: the materialized config plus hashes of
/// every input. Written once when a run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub started_at: String,
    pub config: RunConfig,
    /// Input path → sha256. Shipped assets appear as `builtin:<name>`.
    pub inputs: BTreeMap<String, String>,
    pub scaffold_hash: String,
}

impl RunManifest {
    pub fn new(config: RunConfig, inputs: BTreeMap<String, String>, scaffold_hash: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config,
            inputs,
            scaffold_hash,
        }
    }

    /// Whether two manifests describe the same computation.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        self.config == other.config && self.inputs == other.inputs && self.scaffold_hash == other.scaffold_hash
    }

    pub fn read(dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id()).map_err(|e| PipelineError::io(&path, e))?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(&path).unwrap_or_default();
                    let pid: Option<u32> = holder.trim().parse().ok();
                    if pid.is_some_and(process_alive) {
                        return Err(PipelineError::Locked {
                            dir: dir.to_path_buf(),
                            pid: pid.unwrap_or_default(),
                        });
                    }
                    // Stale lock from a dead process.
                    let _ = std::fs::remove_file(&path);
                }
                Err(e) => return Err(PipelineError::io(&path, e)),
            }
        }
        Err(PipelineError::Locked {
            dir: dir.to_path_buf(),
            pid: 0,
        })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(target_os = "linux")]
fn process_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

// Without a cheap liveness check, only our own pid counts as stale.
#[cfg(not(target_os = "linux"))]
fn process_alive(pid: u32) -> bool {
    pid != std::process::id()
}
