//! The append file: one canonical `LogRecord` per line, synced to disk
//! before the append returns.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use vitaldx_core::canonical;
use vitaldx_core::memory::RetrainJobDescriptor;

use crate::chain::{verify_text, ChainError, Entry, Head, LogRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Reads and verifies a whole log file. A missing file is an empty log.
pub fn read_log(path: &Path) -> Result<(Vec<LogRecord>, Head), StoreError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes).map_err(io_err(path))?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(path)(e)),
    }
    Ok(verify_text(&bytes)?)
}

pub struct LogStore {
    path: PathBuf,
    file: File,
    head: Head,
}

impl LogStore {
    /// Opens (creating if needed) the log at `path`, verifying what is
    /// already there. Returns the existing records for replay.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogRecord>), StoreError> {
        let (records, head) = read_log(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok((Self { path: path.to_path_buf(), file, head }, records))
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Seals and durably writes one entry. The head only advances once the
    /// line is on disk.
    pub fn append(&mut self, entry: &Entry) -> Result<LogRecord, StoreError> {
        let mut head = self.head.clone();
        let record = head.seal(entry);
        let mut line = record.to_line();
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.head = head;
        Ok(record)
    }
}

/// Newline-delimited retraining-job descriptors for external consumers.
pub struct Outbox {
    path: PathBuf,
    file: File,
}

impl Outbox {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn write(&mut self, descriptors: &[RetrainJobDescriptor]) -> Result<(), StoreError> {
        if descriptors.is_empty() {
            return Ok(());
        }
        let mut text = String::new();
        for d in descriptors {
            text.push_str(&canonical::to_canonical_string(d));
            text.push('\n');
        }
        self.file.write_all(text.as_bytes()).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

#[cfg(test)]
mod tests {
    use vitaldx_core::engine::Input;
    use vitaldx_core::time::Timestamp;

    use super::*;

    #[test]
    fn reopen_continues_the_chain() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.ndjson");
        let entry = |s| Entry { at: Timestamp::from_seconds(s), input: Input::Tick };
        let (mut store, records) = LogStore::open(&path).unwrap();
        assert!(records.is_empty());
        store.append(&entry(1)).unwrap();
        let second = store.append(&entry(2)).unwrap();
        drop(store);
        let (mut store, records) = LogStore::open(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(store.head().digest, second.digest);
        let third = store.append(&entry(3)).unwrap();
        assert_eq!(third.seq, 2);
        assert_eq!(third.prev_digest, second.digest);
    }
}
