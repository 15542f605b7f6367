use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendKind};

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    text: String,
}

/// Response cache persisted as JSON lines; later lines win.
#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<(HashMap<String, String>, File)>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| BackendError::io(path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| BackendError::io(path, e))?;
                // A torn final line from an interrupted write is ignored.
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(entry.key, entry.text);
                }
            }
        }
        let file = append(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: Mutex::new((entries, file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().expect("cache lock").0.get(key).cloned()
    }

    pub fn put(&self, key: &str, text: &str) -> Result<(), BackendError> {
        let mut guard = self.entries.lock().expect("cache lock");
        let line = serde_json::to_string(&CacheLine {
            key: key.to_string(),
            text: text.to_string(),
        })
        .expect("cache line serializes");
        writeln!(guard.1, "{line}").map_err(|e| BackendError::io(&self.path, e))?;
        guard.0.insert(key.to_string(), text.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: String,
    pub kind: BackendKind,
    pub model: String,
    pub fingerprint: String,
    pub attempt: u32,
    /// `ok`, `cache-hit`, `error` or `error-<http status>`.
    pub status: String,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

/// Append-only JSON-lines request log. Never records prompt text or secrets.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(append(path)?),
        })
    }

    pub fn append(&self, record: &AuditRecord) -> Result<(), BackendError> {
        let line = serde_json::to_string(record).expect("audit record serializes");
        let mut file = self.file.lock().expect("audit lock");
        writeln!(file, "{line}").map_err(|e| BackendError::io(&self.path, e))
    }

    pub fn read(path: &Path) -> Result<Vec<AuditRecord>, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::io(path, e))?;
        text.lines()
            .map(|l| serde_json::from_str(l).map_err(|e| BackendError::Response(e.to_string())))
            .collect()
    }
}

fn append(path: &Path) -> Result<File, BackendError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BackendError::io(dir, e))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .read(true)
        .open(path)
        .map_err(|e| BackendError::io(path, e))?;
    // Terminate a torn last line so new records start cleanly.
    if ends_mid_line(&mut file).map_err(|e| BackendError::io(path, e))? {
        file.write_all(b"\n").map_err(|e| BackendError::io(path, e))?;
    }
    Ok(file)
}

fn ends_mid_line(file: &mut File) -> std::io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8];
    file.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}
