//! Single-flight memo cache with an optional content-addressed disk layer.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::ApiError;

/// Bumped whenever a persisted payload layout changes.
pub const CACHE_SCHEMA: u32 = 1;

type Slot<V> = Arc<OnceLock<Result<Arc<V>, ApiError>>>;

/// Hex SHA-256 of the canonical JSON of `parts`.
pub fn content_key<T: Serialize>(kind: &str, parts: &T) -> String {
    let mut h = Sha256::new();
    h.update(format!("{kind}/{CACHE_SCHEMA}\n").as_bytes());
    h.update(serde_json::to_vec(parts).expect("cache key serializes"));
    hex::encode(h.finalize())
}

pub struct FlightCache<V> {
    kind: &'static str,
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Slot<V>>>,
    computed: AtomicUsize,
    loaded: AtomicUsize,
}

impl<V> FlightCache<V> {
    /// `root` is the cache directory; entries live under `root/kind`.
    pub fn new(kind: &'static str, root: Option<&Path>) -> Self {
        FlightCache {
            kind,
            dir: root.map(|r| r.join(kind)),
            slots: Mutex::new(HashMap::new()),
            computed: AtomicUsize::new(0),
            loaded: AtomicUsize::new(0),
        }
    }

    /// Returns the value for `key`, computing it at most once per process.
    /// Concurrent callers for the same key wait for the first one. Values are
    /// kept in memory only.
    pub fn get_or_compute(&self, key: &str, compute: impl FnOnce() -> Result<V, ApiError>) -> Result<Arc<V>, ApiError> {
        self.slot(key)
            .get_or_init(|| {
                let v = compute()?;
                self.computed.fetch_add(1, Ordering::Relaxed);
                Ok(Arc::new(v))
            })
            .clone()
    }

    fn slot(&self, key: &str) -> Slot<V> {
        let mut slots = self.slots.lock().expect("cache lock");
        slots.entry(key.to_string()).or_default().clone()
    }

    /// Number of values computed (not loaded from disk) so far.
    pub fn computed(&self) -> usize {
        self.computed.load(Ordering::Relaxed)
    }

    /// Number of values loaded from the disk layer so far.
    pub fn loaded(&self) -> usize {
        self.loaded.load(Ordering::Relaxed)
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

impl<V: Serialize + DeserializeOwned> FlightCache<V> {
    /// Like [`FlightCache::get_or_compute`], but first consults the disk layer
    /// and persists freshly computed values there.
    pub fn get_or_compute_persisted(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<V, ApiError>,
    ) -> Result<Arc<V>, ApiError> {
        self.slot(key)
            .get_or_init(|| {
                if let Some(v) = self.read(key) {
                    self.loaded.fetch_add(1, Ordering::Relaxed);
                    return Ok(Arc::new(v));
                }
                let v = compute()?;
                self.computed.fetch_add(1, Ordering::Relaxed);
                self.write(key, &v);
                Ok(Arc::new(v))
            })
            .clone()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    /// Unreadable or stale entries count as misses.
    fn read(&self, key: &str) -> Option<V> {
        let bytes = fs::read(self.path(key)?).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Best effort: a failed write only costs a recomputation later.
    fn write(&self, key: &str, value: &V) {
        let (Some(dir), Some(path)) = (&self.dir, self.path(key)) else { return };
        let Ok(bytes) = serde_json::to_vec(value) else { return };
        if fs::create_dir_all(dir).is_err() {
            return;
        }
        let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
        if fs::write(&tmp, bytes).is_ok() && fs::rename(&tmp, &path).is_err() {
            let _ = fs::remove_file(&tmp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn computes_once_under_contention() {
        let cache: Arc<FlightCache<u64>> = Arc::new(FlightCache::new("t", None));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let c = cache.clone();
                thread::spawn(move || {
                    *c.get_or_compute("k", || {
                        thread::sleep(std::time::Duration::from_millis(20));
                        Ok(42)
                    })
                    .unwrap()
                })
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), 42);
        }
        assert_eq!(cache.computed(), 1);
    }

    #[test]
    fn disk_layer_round_trips() {
        let dir = std::env::temp_dir().join(format!("flight-cache-{}", std::process::id()));
        let a: FlightCache<Vec<f64>> = FlightCache::new("v", Some(&dir));
        let v = vec![0.1 + 0.2, 1e-300, -3.5];
        a.get_or_compute_persisted("x", || Ok(v.clone())).unwrap();
        let b: FlightCache<Vec<f64>> = FlightCache::new("v", Some(&dir));
        let got = b.get_or_compute_persisted("x", || panic!("should load from disk")).unwrap();
        assert_eq!(*got, v);
        assert_eq!(b.loaded(), 1);
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn keys_are_content_addressed() {
        assert_eq!(content_key("a", &(1, "x")), content_key("a", &(1, "x")));
        assert_ne!(content_key("a", &(1, "x")), content_key("b", &(1, "x")));
    }
}
