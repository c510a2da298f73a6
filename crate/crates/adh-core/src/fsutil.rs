//! Small file-system helpers shared by the serialization paths.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// Writes a file atomically: the content goes to `<path>.tmp` first and is
/// renamed into place only after a successful flush, so readers never observe
/// a partially written file.
pub fn atomic_write(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    let mut out = BufWriter::new(File::create(&tmp)?);
    match write(&mut out).and_then(|()| out.flush().map_err(Into::into)) {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(err) => {
            drop(out);
            let _ = fs::remove_file(&tmp);
            Err(err)
        }
    }
}

/// Convenience wrapper for writing a complete byte buffer atomically.
pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, |out| out.write_all(bytes).map_err(Into::into))
}

fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
