use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::fail::Outcome;

pub fn read(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

/// Writes `contents` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Outcome {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Advisory lock on a history file, held through a `.lock` sidecar so the
/// history itself can be replaced by rename while locked.
pub struct HistoryLock {
    _file: File,
}

fn sidecar(history: &Path) -> PathBuf {
    let mut name = history
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".lock");
    history.with_file_name(name)
}

impl HistoryLock {
    pub fn exclusive(history: &Path) -> Outcome<Self> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(sidecar(history))?;
        file.lock()?;
        Ok(HistoryLock { _file: file })
    }

    /// Shared lock for readers. Nothing is created when there is no sidecar
    /// yet, so read-only commands never write next to the history.
    pub fn shared(history: &Path) -> Outcome<Option<Self>> {
        match File::open(sidecar(history)) {
            Ok(file) => {
                file.lock_shared()?;
                Ok(Some(HistoryLock { _file: file }))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}
