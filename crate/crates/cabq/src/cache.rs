//! Content-addressed JSON cache: `<dir>/<graph hash>/<kind>/<sha256(key)>.json`.
//!
//! Writes go to a temporary file that is renamed into place, so concurrent
//! readers never see partial entries. Entries that fail to parse are
//! deleted and reported as misses.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use log::warn;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::io::sha256_hex;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct Cache {
    root: Option<PathBuf>,
}

impl Cache {
    /// A cache namespaced by `graph_hash` under `dir`.
    pub fn new(dir: &Path, graph_hash: &str) -> Self {
        Cache { root: Some(dir.join(graph_hash)) }
    }

    pub fn disabled() -> Self {
        Cache { root: None }
    }

    pub fn enabled(&self) -> bool {
        self.root.is_some()
    }

    fn path(&self, kind: &str, key: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(kind).join(format!("{}.json", sha256_hex(key.as_bytes()))))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Option<T> {
        let path = self.path(kind, key)?;
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                warn!("evicting corrupt cache entry {}: {e}", path.display());
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    /// Best effort; failures are logged and otherwise ignored.
    pub fn put<T: Serialize>(&self, kind: &str, key: &str, value: &T) {
        let Some(path) = self.path(kind, key) else { return };
        if let Err(e) = write_atomic(&path, &serde_json::to_vec(value).expect("cache values serialize")) {
            warn!("cache write {} failed: {e}", path.display());
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("cache paths have a parent");
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}
