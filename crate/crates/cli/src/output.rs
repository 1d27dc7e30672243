use std::io::{BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::{CliError, CliResult};

/// Writes through a temporary file in the destination directory and renames it into
/// place only after `fill` succeeds, so a failed command leaves no partial file.
pub fn write_atomic<T>(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<&mut NamedTempFile>) -> CliResult<T>,
) -> CliResult<T> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Input(format!("cannot create a file in {}: {e}", dir.display())))?;
    let value = {
        let mut w = BufWriter::new(&mut tmp);
        let value = fill(&mut w)?;
        w.flush().map_err(|e| write_error(path, e))?;
        value
    };
    tmp.as_file().sync_all().map_err(|e| write_error(path, e))?;
    tmp.persist(path).map_err(|e| write_error(path, e.error))?;
    Ok(value)
}

pub fn write_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("cannot write {}: {e}", path.display()))
}
