use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Exclusive writer lock for a codebook: `<codebook>.lock`, removed on drop.
pub struct CodebookLock {
    path: PathBuf,
}

impl CodebookLock {
    pub fn acquire(codebook: &Path) -> Result<Self> {
        let mut name = codebook.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(CodebookLock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                bail!("{} is locked by another writer (remove {} if stale)", codebook.display(), path.display())
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for CodebookLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
