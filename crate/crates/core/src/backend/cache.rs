use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{BackendError, ScoreRequest, Scorer};
use crate::error::{Error, Result};

type Key = [u8; 16];

/// Score cache keyed by `(backend identity, prefix, continuation)`.
///
/// Values are stored as raw `f64` bits so cached results are bit-identical to
/// fresh ones. With a backing file every new entry is appended as one line
/// `<key hex> <value bits hex>`; a torn final line from an interrupted run is
/// ignored on load.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<Key, u64>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut torn = false;
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(f).split(b'\n') {
                let line = line.map_err(|e| Error::io(path, e))?;
                match std::str::from_utf8(&line).ok().and_then(parse_line) {
                    Some((k, v)) => {
                        entries.insert(k, v);
                        torn = false;
                    }
                    None => torn = !line.is_empty(),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        if torn {
            // terminate the partial record so the next append starts on a fresh line
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self { entries: RwLock::new(entries), file: Some(Mutex::new(file)), path: Some(path.to_path_buf()) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &Key) -> Option<f64> {
        self.entries.read().expect("cache lock").get(key).map(|&bits| f64::from_bits(bits))
    }

    fn insert(&self, key: Key, value: f64) -> Result<(), BackendError> {
        let bits = value.to_bits();
        let fresh = self.entries.write().expect("cache lock").insert(key, bits).is_none();
        if fresh {
            if let Some(file) = &self.file {
                let mut f = file.lock().expect("cache file lock");
                writeln!(f, "{} {:016x}", hex::encode(key), bits).map_err(|e| BackendError::Cache(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn key(identity: &str, request: &ScoreRequest, include_meta: bool) -> Key {
        let mut h = Sha256::new();
        h.update(identity.as_bytes());
        h.update([0x1F]);
        h.update(request.prefix.as_bytes());
        h.update([0x1F]);
        h.update(request.continuation.as_bytes());
        if include_meta {
            h.update([0x1F]);
            h.update(serde_json::to_vec(&request.meta).expect("meta serializes"));
        }
        let digest = h.finalize();
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        key
    }
}

fn parse_line(line: &str) -> Option<(Key, u64)> {
    let (k, v) = line.split_once(' ')?;
    let raw = hex::decode(k).ok()?;
    let key: Key = raw.try_into().ok()?;
    if v.len() != 16 {
        return None;
    }
    let bits = u64::from_str_radix(v, 16).ok()?;
    Some((key, bits))
}

/// Transparent caching wrapper. Counts the requests that reached the inner backend.
pub struct CachedScorer<S> {
    inner: S,
    cache: Arc<ScoreCache>,
    identity: String,
    misses: AtomicU64,
    hits: AtomicU64,
}

impl<S: Scorer> CachedScorer<S> {
    pub fn new(inner: S, cache: Arc<ScoreCache>) -> Self {
        let identity = inner.identity();
        Self { inner, cache, identity, misses: AtomicU64::new(0), hits: AtomicU64::new(0) }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn cache(&self) -> &Arc<ScoreCache> {
        &self.cache
    }

    /// Number of requests forwarded to the wrapped backend.
    pub fn backend_calls(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        let key = ScoreCache::key(&self.identity, request, self.inner.reads_meta());
        if let Some(v) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.score(request)?;
        self.cache.insert(key, v)?;
        Ok(v)
    }

    fn reads_meta(&self) -> bool {
        self.inner.reads_meta()
    }
}
