use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::HarnessError;
use crate::model::ResponseRecord;

/// Append-only JSONL store of response records keyed by cache key.
///
/// Lines that fail to parse (typically a line cut short by a crash) are
/// skipped and counted. Records without a cache key are kept on disk but not
/// indexed.
#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    file: Mutex<File>,
    index: RwLock<HashMap<String, ResponseRecord>>,
    skipped_lines: usize,
}

fn cache_io(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Cache(format!("{}: {e}", path.display()))
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| cache_io(parent, e))?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| cache_io(path, e))?;

        let mut index = HashMap::new();
        let mut skipped_lines = 0;
        for line in BufReader::new(&mut file).lines() {
            let line = line.map_err(|e| cache_io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ResponseRecord>(&line) {
                Ok(record) => {
                    if let Some(key) = record.cache_key.clone() {
                        index.entry(key).or_insert(record);
                    }
                }
                Err(e) => {
                    log::warn!("{}: skipping malformed cache line: {e}", path.display());
                    skipped_lines += 1;
                }
            }
        }

        // Terminate a partial last line so the next append starts cleanly.
        let len = file.seek(SeekFrom::End(0)).map_err(|e| cache_io(path, e))?;
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).map_err(|e| cache_io(path, e))?;
            file.read_exact(&mut last).map_err(|e| cache_io(path, e))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(|e| cache_io(path, e))?;
            }
        }

        Ok(ResponseCache {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            index: RwLock::new(index),
            skipped_lines,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<ResponseRecord> {
        self.index.read().unwrap().get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.read().unwrap().contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    /// Persists `record` unless its key is already stored, in which case the
    /// stored record is returned instead.
    pub fn insert(&self, record: ResponseRecord) -> Result<ResponseRecord, HarnessError> {
        let key = record
            .cache_key
            .clone()
            .ok_or_else(|| HarnessError::Cache("record without cache_key".into()))?;
        let mut file = self.file.lock().unwrap();
        if let Some(existing) = self.get(&key) {
            return Ok(existing);
        }
        let mut line = serde_json::to_string(&record).map_err(|e| HarnessError::Cache(e.to_string()))?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| cache_io(&self.path, e))?;
        file.flush().map_err(|e| cache_io(&self.path, e))?;
        self.index.write().unwrap().insert(key, record.clone());
        Ok(record)
    }
}
