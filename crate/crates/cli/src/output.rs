use crate::error::CliError;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Files written by a command. Unless [`Outputs::commit`] is called they are
/// deleted again when this is dropped, so a failed run leaves nothing behind.
#[derive(Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        self.written.push(path.to_path_buf());
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    /// Registers a file produced by other means, creating its directory.
    pub fn track(&mut self, path: &Path) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in self.written.iter().rev() {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}
