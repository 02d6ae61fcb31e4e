//! Journal file I/O.
//!
//! `journal.lhsj` is UTF-8 JSON lines. The first line is the header
//! `{"format":"lhs-journal","version":1}`; every following line is one
//! transaction `{"seq":N,"ops":[...]}` with strictly increasing `seq`. A
//! final line without its newline is a torn write and is discarded on open.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::state::Op;
use crate::StoreError;

pub const JOURNAL_FORMAT: &str = "lhs-journal";
pub const JOURNAL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Entry {
    pub seq: u64,
    pub ops: Vec<Op>,
}

/// How hard an append tries to reach stable storage before returning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// fsync after every transaction; survives power loss.
    #[default]
    Fsync,
    /// Hand the bytes to the OS; survives a process crash but not power loss.
    Flush,
}

pub(crate) struct JournalWriter {
    path: PathBuf,
    file: File,
    sync: SyncMode,
    pub bytes: u64,
}

pub(crate) fn header_line() -> String {
    let mut s = serde_json::to_string(&Header { format: JOURNAL_FORMAT.into(), version: JOURNAL_VERSION }).unwrap();
    s.push('\n');
    s
}

fn corrupt(line: usize, detail: impl Into<String>) -> StoreError {
    StoreError::Corrupt { line, detail: detail.into() }
}

/// Reads all complete entries, truncating a torn tail in place.
pub(crate) fn read_journal(path: &Path) -> Result<(Vec<Entry>, u64), StoreError> {
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    let mut entries = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut good_end = 0usize;
    let mut last_seq = 0u64;
    while offset < raw.len() {
        line_no += 1;
        let (line, next, complete) = match raw[offset..].iter().position(|b| *b == b'\n') {
            Some(i) => (&raw[offset..offset + i], offset + i + 1, true),
            None => (&raw[offset..], raw.len(), false),
        };
        if line_no == 1 {
            let h: Header = serde_json::from_slice(line).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
            if h.format != JOURNAL_FORMAT {
                return Err(StoreError::UnsupportedFormat(h.format));
            }
            if h.version != JOURNAL_VERSION {
                return Err(StoreError::UnsupportedFormat(format!("{} v{}", h.format, h.version)));
            }
            if !complete {
                break;
            }
        } else {
            match serde_json::from_slice::<Entry>(line) {
                Ok(e) if complete => {
                    if e.seq <= last_seq {
                        return Err(corrupt(line_no, format!("sequence {} after {}", e.seq, last_seq)));
                    }
                    last_seq = e.seq;
                    entries.push(e);
                }
                // Torn tail: the writer died mid-line.
                _ if !complete => break,
                Err(e) => return Err(corrupt(line_no, e.to_string())),
                Ok(_) => unreachable!(),
            }
        }
        offset = next;
        good_end = next;
    }
    if good_end < raw.len() {
        file.set_len(good_end as u64)?;
        file.sync_all()?;
    }
    if good_end == 0 {
        // Header itself was torn or missing.
        file.set_len(0)?;
        file.seek(SeekFrom::Start(0))?;
        file.write_all(header_line().as_bytes())?;
        file.sync_all()?;
        good_end = header_line().len();
    }
    Ok((entries, good_end as u64))
}

impl JournalWriter {
    pub fn create(path: &Path, sync: SyncMode) -> Result<Self, StoreError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(header_line().as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        sync_dir(path);
        Self::open_append(path, sync, header_line().len() as u64)
    }

    pub fn open_append(path: &Path, sync: SyncMode, bytes: u64) -> Result<Self, StoreError> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(JournalWriter { path: path.to_path_buf(), file, sync, bytes })
    }

    pub fn append(&mut self, entry: &Entry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry).expect("journal entries serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if self.sync == SyncMode::Fsync {
            self.file.sync_data()?;
        }
        self.bytes += line.len() as u64;
        Ok(())
    }

    pub fn sync_mode(&self) -> SyncMode {
        self.sync
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub(crate) fn sync_dir(path: &Path) {
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
}

/// Lines in a journal file, header included. For diagnostics.
pub fn journal_line_count(path: &Path) -> std::io::Result<usize> {
    Ok(BufReader::new(File::open(path)?).lines().count())
}
