//! Artifact writing. Files are produced in a staging directory inside the
//! output directory and renamed into place once the command has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::failure::Failure;

pub struct Staging {
    out_dir: PathBuf,
    dir: TempDir,
}

impl Staging {
    pub fn new(out_dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(out_dir)
            .map_err(|e| Failure::data(format!("cannot create {}: {e}", out_dir.display())))?;
        let dir = tempfile::Builder::new()
            .prefix(".roadmix-staging-")
            .tempdir_in(out_dir)
            .map_err(|e| Failure::data(format!("cannot stage in {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        self.dir.path()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        let path = self.path(name);
        fs::write(&path, contents)
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Failure::data(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.write(name, text)
    }

    /// Moves every staged file into the output directory; returns their final paths.
    pub fn commit(self) -> Result<Vec<PathBuf>, Failure> {
        let io = |e: std::io::Error| Failure::data(format!("cannot finalize outputs: {e}"));
        let mut names: Vec<_> = fs::read_dir(self.dir.path())
            .map_err(io)?
            .map(|entry| entry.map(|e| e.file_name()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        names.sort();
        let mut written = Vec::with_capacity(names.len());
        for name in names {
            let target = self.out_dir.join(&name);
            fs::rename(self.dir.path().join(&name), &target).map_err(io)?;
            written.push(target);
        }
        Ok(written)
    }
}
