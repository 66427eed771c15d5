//! Newline-delimited JSON append-only log.
//!
//! Every entry is one compact JSON document followed by `\n`. On open, the
//! whole file is replayed. Bytes after the final newline are the remains of
//! a write that was interrupted and are truncated away; any complete line
//! that fails to parse is reported as corruption.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt log {path} at line {line}: {detail}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("could not encode log entry: {0}")]
    Encode(#[from] serde_json::Error),
}

impl LogError {
    fn io(path: &Path, source: io::Error) -> Self {
        LogError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Whether each append is fsynced. `Flush` survives a killed process,
/// `Sync` also survives power loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    #[default]
    Flush,
    Sync,
}

#[derive(Debug)]
pub struct AppendLog<T> {
    sink: Option<(PathBuf, File)>,
    durability: Durability,
    len: usize,
    _entry: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> AppendLog<T> {
    /// A log that keeps nothing on disk.
    pub fn memory() -> Self {
        AppendLog {
            sink: None,
            durability: Durability::Flush,
            len: 0,
            _entry: PhantomData,
        }
    }

    /// Opens (creating if needed) the log at `path` and returns every entry
    /// already in it.
    pub fn open(path: &Path, durability: Durability) -> Result<(Self, Vec<T>), LogError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| LogError::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| LogError::io(path, e))?;

        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            file.set_len(complete as u64)
                .map_err(|e| LogError::io(path, e))?;
            file.seek(SeekFrom::End(0))
                .map_err(|e| LogError::io(path, e))?;
        }

        let mut entries = Vec::new();
        for (index, line) in bytes[..complete].split(|b| *b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let entry = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
                path: path.to_path_buf(),
                line: index + 1,
                detail: e.to_string(),
            })?;
            entries.push(entry);
        }
        let log = AppendLog {
            sink: Some((path.to_path_buf(), file)),
            durability,
            len: entries.len(),
            _entry: PhantomData,
        };
        Ok((log, entries))
    }

    pub fn append(&mut self, entry: &T) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        if let Some((path, file)) = &mut self.sink {
            file.write_all(&line).map_err(|e| LogError::io(path, e))?;
            file.flush().map_err(|e| LogError::io(path, e))?;
            if self.durability == Durability::Sync {
                file.sync_data().map_err(|e| LogError::io(path, e))?;
            }
        }
        self.len += 1;
        Ok(())
    }

    /// Number of entries in the log, including those replayed at open.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Entry {
        n: u32,
    }

    #[test]
    fn replays_what_was_appended() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.log");
        let (mut log, entries) = AppendLog::<Entry>::open(&path, Durability::Flush).unwrap();
        assert!(entries.is_empty());
        log.append(&Entry { n: 1 }).unwrap();
        log.append(&Entry { n: 2 }).unwrap();
        drop(log);
        let (log, entries) = AppendLog::<Entry>::open(&path, Durability::Flush).unwrap();
        assert_eq!(entries, vec![Entry { n: 1 }, Entry { n: 2 }]);
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.log");
        std::fs::write(&path, "{\"n\":1}\n{\"n\":").unwrap();
        let (mut log, entries) = AppendLog::<Entry>::open(&path, Durability::Flush).unwrap();
        assert_eq!(entries, vec![Entry { n: 1 }]);
        log.append(&Entry { n: 3 }).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "{\"n\":1}\n{\"n\":3}\n"
        );
    }

    #[test]
    fn complete_garbage_line_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.log");
        std::fs::write(&path, "{\"n\":1}\nnope\n{\"n\":2}\n").unwrap();
        let err = AppendLog::<Entry>::open(&path, Durability::Flush).unwrap_err();
        assert!(matches!(err, LogError::Corrupt { line: 2, .. }), "{err}");
    }
}
