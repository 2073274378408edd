pub mod eval;
pub mod gen;
pub mod overlay;
pub mod reconstruct;
pub mod train;

use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}
