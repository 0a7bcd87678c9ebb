use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::record::{RecordLine, SessionRecord};

/// Where session lines go. `append` receives whole lines only and must not
/// return before they are handed to the OS.
pub trait RecordSink: Send {
    fn append(&mut self, chunk: &str) -> io::Result<()>;
    fn location(&self) -> String;
}

/// JSON Lines file, one record per session.
#[derive(Debug)]
pub struct FileSink {
    file: File,
    path: PathBuf,
}

impl FileSink {
    /// Fails if the file exists; a record is never overwritten.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        Ok(FileSink { file, path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RecordSink for FileSink {
    fn append(&mut self, chunk: &str) -> io::Result<()> {
        self.file.write_all(chunk.as_bytes())?;
        self.file.flush()
    }

    fn location(&self) -> String {
        self.path.display().to_string()
    }
}

/// In-memory sink; clones share the buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<String>>);

impl MemorySink {
    pub fn contents(&self) -> String {
        self.0.lock().map(|s| s.clone()).unwrap_or_default()
    }
}

impl RecordSink for MemorySink {
    fn append(&mut self, chunk: &str) -> io::Result<()> {
        self.0
            .lock()
            .map_err(|_| io::Error::other("sink poisoned"))?
            .push_str(chunk);
        Ok(())
    }

    fn location(&self) -> String {
        "memory".to_string()
    }
}

pub fn encode_line(line: &RecordLine) -> String {
    let mut s = serde_json::to_string(line).expect("record lines always serialize");
    s.push('\n');
    s
}

/// The exact bytes a live session writes for `record`.
pub fn encode_record(record: &SessionRecord) -> String {
    let mut out = encode_line(&RecordLine::Header(record.header.clone()));
    for e in &record.entries {
        out.push_str(&encode_line(&RecordLine::Entry(e.clone())));
    }
    if !record.trailing_discards.is_empty() {
        out.push_str(&encode_line(&RecordLine::Trailer { discards: record.trailing_discards.clone() }));
    }
    out
}
