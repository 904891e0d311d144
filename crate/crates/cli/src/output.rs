//! All-or-nothing output directories: commands write into a staging
//! directory next to the target, which replaces the target only on success.
//! A staging directory that is dropped uncommitted is deleted.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tempfile::TempDir;

pub struct Staged {
    target: PathBuf,
    dir: TempDir,
}

impl Staged {
    /// Fails if `target` exists and `overwrite` is false.
    pub fn new(target: &Path, overwrite: bool) -> Result<Self> {
        if target.exists() && !overwrite {
            bail!("{} already exists (pass --force to replace it)", target.display());
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let dir = tempfile::Builder::new()
            .prefix(&format!(".{name}.staging-"))
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            dir,
        })
    }

    /// Stages a copy of the current target, for commands that extend it.
    pub fn seeded(target: &Path) -> Result<Self> {
        let staged = Self::new(target, true)?;
        if target.is_dir() {
            copy_tree(target, staged.path())?;
        }
        Ok(staged)
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Moves the staged tree into place, replacing any existing target.
    pub fn commit(self) -> Result<PathBuf> {
        let staged = self.dir.keep();
        set_mode(&staged, 0o755)?;
        if self.target.exists() {
            let old = PathBuf::from(format!("{}.old", staged.display()));
            fs::rename(&self.target, &old).with_context(|| format!("moving aside {}", self.target.display()))?;
            if let Err(e) = fs::rename(&staged, &self.target) {
                let _ = fs::rename(&old, &self.target);
                let _ = fs::remove_dir_all(&staged);
                return Err(e).with_context(|| format!("replacing {}", self.target.display()));
            }
            fs::remove_dir_all(&old).with_context(|| format!("removing {}", old.display()))?;
        } else if let Err(e) = fs::rename(&staged, &self.target) {
            let _ = fs::remove_dir_all(&staged);
            return Err(e).with_context(|| format!("creating {}", self.target.display()));
        }
        Ok(self.target)
    }
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    for entry in fs::read_dir(from).with_context(|| format!("reading {}", from.display()))? {
        let entry = entry?;
        let dst = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            fs::create_dir_all(&dst)?;
            copy_tree(&entry.path(), &dst)?;
        } else {
            fs::copy(entry.path(), &dst).with_context(|| format!("copying {}", entry.path().display()))?;
        }
    }
    Ok(())
}

/// Single-file variant: `write` fills a temporary file next to the target,
/// which is then renamed over it.
pub fn write_atomic(target: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(parent)?;
    write(tmp.path())?;
    set_mode(tmp.path(), 0o644)?;
    tmp.persist(target).with_context(|| format!("writing {}", target.display()))?;
    Ok(())
}

pub fn write_file_atomic(target: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(target, |p| fs::write(p, bytes).with_context(|| format!("writing {}", p.display())))
}

// Temporary files and directories are created owner-only.
#[cfg(unix)]
fn set_mode(path: &Path, mode: u32) -> Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(mode)).with_context(|| format!("setting permissions on {}", path.display()))
}

#[cfg(not(unix))]
fn set_mode(_path: &Path, _mode: u32) -> Result<()> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_stage_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        {
            let s = Staged::new(&target, false).unwrap();
            fs::write(s.join("a.txt"), "x").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_replaces_target() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        fs::create_dir(&target).unwrap();
        fs::write(target.join("old.txt"), "old").unwrap();
        assert!(Staged::new(&target, false).is_err());

        let s = Staged::seeded(&target).unwrap();
        fs::write(s.join("new.txt"), "new").unwrap();
        s.commit().unwrap();
        assert_eq!(fs::read_to_string(target.join("old.txt")).unwrap(), "old");
        assert_eq!(fs::read_to_string(target.join("new.txt")).unwrap(), "new");
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }

    #[test]
    fn atomic_file_write() {
        let root = tempfile::tempdir().unwrap();
        let f = root.path().join("sub/x.csv");
        write_file_atomic(&f, b"a,b\n").unwrap();
        assert_eq!(fs::read(&f).unwrap(), b"a,b\n");
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            assert_eq!(fs::metadata(&f).unwrap().permissions().mode() & 0o777, 0o644);
        }
    }
}
