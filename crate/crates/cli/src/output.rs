//! Artifact writing: staged output directories, manifests and `.npy` files.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayBase, Data, Dimension};
use ndarray_npy::{WritableElement, WriteNpyExt};
use serde::Serialize;
use televit::{Error, Result};

/// A directory filled under a temporary name and renamed into place on
/// [`commit`](StagedDir::commit), so an interrupted command never leaves a
/// half-written result where a complete one is expected.
pub struct StagedDir {
    staging: PathBuf,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: impl Into<PathBuf>) -> Result<Self> {
        let target = target.into();
        let name = target
            .file_name()
            .ok_or_else(|| Error::config(format!("{} has no file name", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(StagedDir { staging, target })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.staging.join(rel)
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        Ok(self.target)
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_npy<A, S, D>(path: &Path, array: &ArrayBase<S, D>) -> Result<()>
where
    A: WritableElement,
    S: Data<Elem = A>,
    D: Dimension,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    array
        .write_npy(std::io::BufWriter::new(file))
        .map_err(|e| Error::format(path, e.to_string()))
}
