//! Output locations: overwrite protection and a lock file per run directory.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{runtime, usage, CliResult};

pub const LOCK_NAME: &str = ".pldg.lock";

/// Run root for default output locations, from `PLDG_RUN_ROOT` (default `runs`).
pub fn run_root() -> PathBuf {
    std::env::var_os("PLDG_RUN_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// The explicit output path, or `default_name` under the run root.
pub fn out_path(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| run_root().join(default_name))
}

/// Holds the lock on an output directory until dropped.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    /// Creates or reuses `path`. A directory with existing content is only
    /// reused with `force`.
    pub fn open(path: &Path, force: bool) -> CliResult<Self> {
        if path.is_file() {
            return Err(usage(format!("{} exists and is a file", path.display())));
        }
        if path.is_dir() && !force && has_content(path)? {
            return Err(usage(format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            )));
        }
        fs::create_dir_all(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let lock = path.join(LOCK_NAME);
        acquire(&lock)?;
        Ok(RunDir {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Guard for a single output file; its lock sits next to it.
#[derive(Debug)]
pub struct OutFile {
    pub path: PathBuf,
    lock: PathBuf,
}

impl OutFile {
    pub fn open(path: &Path, force: bool) -> CliResult<Self> {
        if path.exists() && !force {
            return Err(usage(format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            )));
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
        }
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        let lock = path.with_file_name(name);
        acquire(&lock)?;
        Ok(OutFile {
            path: path.to_path_buf(),
            lock,
        })
    }
}

impl Drop for OutFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn has_content(dir: &Path) -> CliResult<bool> {
    let mut entries = fs::read_dir(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    Ok(entries.any(|e| e.is_ok_and(|e| e.file_name() != LOCK_NAME)))
}

fn acquire(lock: &Path) -> CliResult<()> {
    match OpenOptions::new().write(true).create_new(true).open(lock) {
        Ok(mut f) => {
            let _ = writeln!(f, "{}", std::process::id());
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(runtime(format!(
            "{} is held by another process; remove it if that process is gone",
            lock.display()
        ))),
        Err(e) => Err(runtime(format!("{}: {e}", lock.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_to_overwrite_without_force() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        {
            let rd = RunDir::open(&dir, false).unwrap();
            fs::write(rd.file("a.csv"), "x").unwrap();
        }
        assert!(matches!(RunDir::open(&dir, false), Err(crate::error::CliError::Usage(_))));
        assert!(RunDir::open(&dir, true).is_ok());
    }

    #[test]
    fn concurrent_writers_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let _held = RunDir::open(&dir, false).unwrap();
        assert!(matches!(RunDir::open(&dir, true), Err(crate::error::CliError::Runtime(_))));
    }

    #[test]
    fn lock_is_released_on_drop() {
        let tmp = tempfile::tempdir().unwrap();
        let file = tmp.path().join("m.csv");
        drop(OutFile::open(&file, false).unwrap());
        assert!(!tmp.path().join("m.csv.lock").exists());
        assert!(OutFile::open(&file, false).is_ok());
    }
}
