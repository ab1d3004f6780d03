//! On-disk cache of ground-state records keyed by config hash.
//!
//! Layout: `<root>/<config_hash>/manifest.json` plus one JSON payload per
//! entry. Every payload carries a SHA-256 checksum in the manifest and is
//! verified before reuse; a mismatch drops the entry and forces a recompute.
//! Total size across all config directories is capped with LRU eviction.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fiberspec::spectral::GroundStateRecord;

pub const CACHE_ENV: &str = "FIBERSPEC_CACHE_DIR";
pub const DEFAULT_CAP_BYTES: u64 = 2 << 30;
const MANIFEST: &str = "manifest.json";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    file: String,
    checksum: String,
    size: u64,
    /// Nanoseconds since the epoch of the last read or write.
    last_used: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    hash: String,
    version: String,
    created: u64,
    entries: BTreeMap<String, Entry>,
}

pub struct ResultCache {
    root: PathBuf,
    hash: String,
    cap: u64,
    writer: Mutex<()>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

fn now_nanos() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0)
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file and renames, so readers never see a torn payload.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl ResultCache {
    /// `FIBERSPEC_CACHE_DIR` when set, else `<output>/cache`.
    pub fn default_root(output: &Path) -> PathBuf {
        std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| output.join("cache"))
    }

    pub fn open(root: impl Into<PathBuf>, config_hash: &str, cap: u64) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(config_hash))?;
        Ok(Self {
            root,
            hash: config_hash.to_string(),
            cap,
            writer: Mutex::new(()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn dir(&self, hash: &str) -> PathBuf {
        self.root.join(hash)
    }

    fn read_manifest(&self, hash: &str) -> Manifest {
        fs::read(self.dir(hash).join(MANIFEST))
            .ok()
            .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok())
            .filter(|m| m.hash == hash && m.version == VERSION)
            .unwrap_or_else(|| Manifest {
                hash: hash.to_string(),
                version: VERSION.to_string(),
                created: (now_nanos() / 1_000_000_000) as u64,
                entries: BTreeMap::new(),
            })
    }

    fn write_manifest(&self, m: &Manifest) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(m).map_err(io::Error::other)?;
        write_atomic(&self.dir(&m.hash).join(MANIFEST), &bytes)
    }

    /// The cached record for `key`, if present and intact.
    pub fn get(&self, key: &str) -> Option<GroundStateRecord> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut manifest = self.read_manifest(&self.hash);
        let found = manifest.entries.get(key).cloned().and_then(|entry| {
            let bytes = fs::read(self.dir(&self.hash).join(&entry.file)).ok()?;
            if checksum(&bytes) != entry.checksum {
                return None;
            }
            serde_json::from_slice::<GroundStateRecord>(&bytes).ok()
        });
        match found {
            Some(record) => {
                if let Some(e) = manifest.entries.get_mut(key) {
                    e.last_used = now_nanos();
                }
                let _ = self.write_manifest(&manifest);
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(record)
            }
            None => {
                if let Some(stale) = manifest.entries.remove(key) {
                    let _ = fs::remove_file(self.dir(&self.hash).join(stale.file));
                    let _ = self.write_manifest(&manifest);
                }
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn put(&self, key: &str, record: &GroundStateRecord) -> io::Result<()> {
        let bytes = serde_json::to_vec(record).map_err(io::Error::other)?;
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let file = format!("{key}.json");
        write_atomic(&self.dir(&self.hash).join(&file), &bytes)?;
        let mut manifest = self.read_manifest(&self.hash);
        manifest.entries.insert(
            key.to_string(),
            Entry { file, checksum: checksum(&bytes), size: bytes.len() as u64, last_used: now_nanos() },
        );
        self.write_manifest(&manifest)?;
        self.evict()
    }

    /// Drops least-recently-used entries across all config directories until
    /// the total payload size fits the cap.
    fn evict(&self) -> io::Result<()> {
        let mut manifests: Vec<Manifest> = Vec::new();
        for dir in fs::read_dir(&self.root)? {
            let dir = dir?;
            if dir.file_type()?.is_dir() {
                let hash = dir.file_name().to_string_lossy().into_owned();
                manifests.push(self.read_manifest(&hash));
            }
        }
        let mut all: Vec<(u128, usize, String, u64)> = manifests
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.entries.iter().map(move |(k, e)| (e.last_used, i, k.clone(), e.size)))
            .collect();
        let mut total: u64 = all.iter().map(|e| e.3).sum();
        if total <= self.cap {
            return Ok(());
        }
        all.sort();
        let mut touched = vec![false; manifests.len()];
        for (_, i, key, size) in all {
            if total <= self.cap {
                break;
            }
            if let Some(entry) = manifests[i].entries.remove(&key) {
                let _ = fs::remove_file(self.dir(&manifests[i].hash).join(entry.file));
                total -= size;
                touched[i] = true;
            }
        }
        for (m, t) in manifests.iter().zip(touched) {
            if t {
                self.write_manifest(m)?;
            }
        }
        Ok(())
    }

    /// Path of the payload for `key`, for inspection and tests.
    pub fn payload_path(&self, key: &str) -> PathBuf {
        self.dir(&self.hash).join(format!("{key}.json"))
    }
}

/// Cache key of a ground state at momentum ξ (exact bit pattern).
pub fn ground_key(prefix: &str, xi: [f64; 3]) -> String {
    format!("{prefix}-{:016x}-{:016x}-{:016x}", xi[0].to_bits(), xi[1].to_bits(), xi[2].to_bits())
}
