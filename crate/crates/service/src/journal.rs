use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::session::Session;

/// Append-only JSON-lines log of session snapshots. Replaying keeps the last
/// snapshot per session id.
pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, session: &Session) -> std::io::Result<()> {
        let mut line = serde_json::to_string(session).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut f = self.file.lock().expect("journal lock poisoned");
        f.write_all(line.as_bytes())?;
        f.flush()
    }

    /// Latest snapshot of every session in the file. A torn last line, as
    /// left by a crash mid-write, is skipped.
    pub fn replay(path: &Path) -> std::io::Result<Vec<Session>> {
        let mut latest = BTreeMap::new();
        if !path.exists() {
            return Ok(Vec::new());
        }
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if let Ok(s) = serde_json::from_str::<Session>(&line) {
                latest.insert(s.session_id.clone(), s);
            }
        }
        Ok(latest.into_values().collect())
    }
}
