//! Atomic file writes.
//!
//! Every artifact the toolkit produces (checkpoints, caches, reports, plots)
//! is written to a temporary file in the destination directory and renamed
//! into place, so readers never observe a half-written file and an aborted
//! run never clobbers a good artifact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Streams output into `path` atomically via a sibling temp file + rename.
pub fn atomic_write_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut tmp_name = path
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_else(|| "out".into());
    tmp_name.push(format!(".tmp.{}.{n}", std::process::id()));
    let tmp_path = path.with_file_name(tmp_name);

    let file = fs::File::create(&tmp_path).map_err(|e| Error::io(&tmp_path, e))?;
    let mut writer = BufWriter::new(file);
    let result = write(&mut writer)
        .and_then(|()| writer.flush().map_err(|e| Error::io(&tmp_path, e)))
        .and_then(|()| fs::rename(&tmp_path, path).map_err(|e| Error::io(path, e)));
    if result.is_err() {
        let _ = fs::remove_file(&tmp_path);
    }
    result
}

/// Writes a complete byte buffer atomically.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write_with(path, |w| w.write_all(bytes).map_err(|e| Error::io(path, e)))
}
