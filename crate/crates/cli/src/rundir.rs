//! Output directories that appear atomically: built under `<out>.partial`, renamed
//! into place on success, removed on failure.

use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::UsageError;

#[derive(Debug)]
pub struct RunDir {
    target: PathBuf,
    partial: PathBuf,
    committed: bool,
}

impl RunDir {
    pub fn create(target: &Path) -> anyhow::Result<Self> {
        if target.exists() {
            return Err(UsageError::new(format!("output directory {} already exists", target.display())).into());
        }
        let mut name = target
            .file_name()
            .ok_or_else(|| UsageError::new(format!("invalid output path {}", target.display())))?
            .to_os_string();
        name.push(".partial");
        let partial = target.with_file_name(name);
        if partial.exists() {
            std::fs::remove_dir_all(&partial)
                .with_context(|| format!("removing stale {}", partial.display()))?;
        }
        std::fs::create_dir_all(&partial).with_context(|| format!("creating {}", partial.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            partial,
            committed: false,
        })
    }

    /// Directory to write into while the run is in progress.
    pub fn path(&self) -> &Path {
        &self.partial
    }

    /// Where the outputs will live after [`RunDir::commit`].
    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn commit(mut self) -> anyhow::Result<PathBuf> {
        std::fs::rename(&self.partial, &self.target)
            .with_context(|| format!("moving {} to {}", self.partial.display(), self.target.display()))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.partial);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_renames_and_refuses_existing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        let rd = RunDir::create(&out).unwrap();
        std::fs::write(rd.path().join("x"), b"1").unwrap();
        assert!(!out.exists());
        rd.commit().unwrap();
        assert!(out.join("x").exists());
        assert!(RunDir::create(&out).is_err());
    }

    #[test]
    fn dropped_run_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        {
            let rd = RunDir::create(&out).unwrap();
            std::fs::write(rd.path().join("x"), b"1").unwrap();
        }
        assert!(!out.exists());
        assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
    }
}
