//! All-or-nothing output: files are staged in memory and only written once
//! the whole command has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use seawatch::{Error, Result};

#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    /// Writes every file to a temporary sibling, then renames them into
    /// place. On failure the temporaries are removed and nothing is renamed.
    pub fn commit(self) -> Result<()> {
        let mut written: Vec<(PathBuf, &Path)> = Vec::new();
        let result = (|| {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
                }
                let tmp = temp_name(path);
                fs::write(&tmp, bytes).map_err(|e| io_at(&tmp, e))?;
                written.push((tmp, path));
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &written {
                let _ = fs::remove_file(tmp);
            }
            return Err(e);
        }
        for (tmp, path) in &written {
            fs::rename(tmp, path).map_err(|e| io_at(path, e))?;
        }
        Ok(())
    }
}

fn temp_name(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

pub fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_at(path, e))
}

pub fn open(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    Ok(std::io::BufReader::new(fs::File::open(path).map_err(|e| io_at(path, e))?))
}
