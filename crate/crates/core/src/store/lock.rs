//! Advisory whole-file locks on sidecar `.lock` files.
//!
//! Data files are replaced by rename, which would orphan a lock taken on the
//! data file itself, so every data file `f` is guarded by `f.lock` instead.
//! The lock is released when the guard drops.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LockKind {
    Shared,
    Exclusive,
}

#[derive(Debug)]
pub struct LockGuard {
    file: File,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

pub fn lock_path(data: &Path) -> PathBuf {
    let mut name = data.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    data.with_file_name(name)
}

/// Blocks until the lock guarding `data` is held in the requested mode.
pub fn acquire(data: &Path, kind: LockKind) -> Result<LockGuard> {
    let path = lock_path(data);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(&path)
        .map_err(|e| Error::store(&path, e))?;
    match kind {
        LockKind::Shared => file.lock_shared(),
        LockKind::Exclusive => file.lock(),
    }
    .map_err(|e| Error::store(&path, e))?;
    Ok(LockGuard { file })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn exclusive_locks_serialize_threads() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("counter.json");
        let inside = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let data = data.clone();
                let inside = inside.clone();
                std::thread::spawn(move || {
                    for _ in 0..50 {
                        let _g = acquire(&data, LockKind::Exclusive).unwrap();
                        assert_eq!(inside.fetch_add(1, Ordering::SeqCst), 0);
                        inside.fetch_sub(1, Ordering::SeqCst);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            lock_path(Path::new("/tmp/a/cumtime.json")),
            PathBuf::from("/tmp/a/cumtime.json.lock")
        );
    }
}
