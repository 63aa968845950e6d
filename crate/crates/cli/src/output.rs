//! Output files that are either complete or absent.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Files written by one command. Each file goes to a hidden temporary name
/// first and is renamed into place once complete; `discard` removes
/// everything written so far.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Outputs, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, contents)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn discard(self) {
        for path in self.written {
            let _ = fs::remove_file(path);
        }
    }
}

/// Writes `contents` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = path.with_file_name(format!(".{name}.partial"));
    let result = fs::write(&tmp, contents).and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(format!("writing {}", path.display()), e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discard_removes_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::create(dir.path()).unwrap();
        let a = out.write("a.txt", "hello").unwrap();
        assert_eq!(fs::read_to_string(&a).unwrap(), "hello");
        out.discard();
        assert!(!a.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
