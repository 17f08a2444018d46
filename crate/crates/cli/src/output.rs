//! Output files are written to a temporary file in the target directory and
//! renamed into place, so a failed run never leaves a partial file behind.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tempfile::NamedTempFile;

/// Fail early if any of `paths` exists and `force` is off.
pub fn check_writable(paths: &[&Path], force: bool) -> Result<()> {
    for p in paths {
        if !force && p.exists() {
            bail!("{} already exists (use --force to overwrite)", p.display());
        }
    }
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("cannot write into {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
