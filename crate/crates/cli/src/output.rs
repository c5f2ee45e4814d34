//! Outputs are staged in memory and only written once a command has fully
//! succeeded, so a failure never leaves a partial result set behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file to `dir` through temporaries, then renames them into
    /// place. On failure the temporaries and any already-renamed files are
    /// removed.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut temps = Vec::new();
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = fs::write(&tmp, bytes) {
                cleanup(&temps);
                let _ = fs::remove_file(&tmp);
                return Err(CliError::io(&tmp, e));
            }
            temps.push(tmp);
        }
        let mut done = Vec::new();
        for ((name, _), tmp) in self.files.iter().zip(&temps) {
            let dest = dir.join(name);
            if let Err(e) = fs::rename(tmp, &dest) {
                cleanup(&temps);
                cleanup(&done);
                return Err(CliError::io(&dest, e));
            }
            done.push(dest);
        }
        Ok(done)
    }
}

fn cleanup(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}
