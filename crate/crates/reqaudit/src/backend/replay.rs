//! Record/replay cache backend.
//!
//! Record mode serves cache hits and forwards misses to an inner backend,
//! appending each new response to the cache file. Strict mode serves only the
//! cache and errors on a miss — it performs no calls on any inner backend, so
//! a fully cached pipeline run is bit-deterministic and network-free.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{
    request_fingerprint, Backend, BackendError, BackendRequest, BackendResponse, CacheEntry,
};

enum Mode {
    Record { deterministic_timestamps: bool },
    Strict,
}

pub struct ReplayBackend {
    mode: Mode,
    inner: Option<Box<dyn Backend>>,
    cache_path: PathBuf,
    entries: Mutex<BTreeMap<String, CacheEntry>>,
}

impl ReplayBackend {
    /// Record mode: misses go to `inner` and are appended to the cache.
    pub fn record(cache_path: &Path, inner: Box<dyn Backend>) -> Result<Self, BackendError> {
        Ok(Self {
            mode: Mode::Record {
                deterministic_timestamps: false,
            },
            inner: Some(inner),
            cache_path: cache_path.to_path_buf(),
            entries: Mutex::new(load_cache(cache_path)?),
        })
    }

    /// Record mode with fixed recorded-at timestamps, for regenerating
    /// committed fixtures without diff churn.
    pub fn record_deterministic(
        cache_path: &Path,
        inner: Box<dyn Backend>,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            mode: Mode::Record {
                deterministic_timestamps: true,
            },
            inner: Some(inner),
            cache_path: cache_path.to_path_buf(),
            entries: Mutex::new(load_cache(cache_path)?),
        })
    }

    /// Strict mode: cache only, a miss is an error.
    pub fn strict(cache_path: &Path) -> Result<Self, BackendError> {
        Ok(Self {
            mode: Mode::Strict,
            inner: None,
            cache_path: cache_path.to_path_buf(),
            entries: Mutex::new(load_cache(cache_path)?),
        })
    }

    /// Strict mode holding an instrumented stub. The stub is never invoked;
    /// wiring it in lets tests assert that zero calls reach it.
    pub fn strict_with_stub(
        cache_path: &Path,
        stub: Box<dyn Backend>,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            mode: Mode::Strict,
            inner: Some(stub),
            cache_path: cache_path.to_path_buf(),
            entries: Mutex::new(load_cache(cache_path)?),
        })
    }

    pub fn entry_count(&self) -> usize {
        self.entries.lock().expect("replay cache poisoned").len()
    }

    fn append_entry(&self, entry: &CacheEntry) -> Result<(), BackendError> {
        if let Some(parent) = self.cache_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.cache_path)?;
        let line = serde_json::to_string(entry)
            .map_err(|e| BackendError::CacheCorrupt(e.to_string()))?;
        writeln!(file, "{line}")?;
        Ok(())
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        match self.mode {
            Mode::Record { .. } => "replay-record",
            Mode::Strict => "replay-strict",
        }
    }

    fn send(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let fingerprint = request_fingerprint(request);
        {
            let entries = self.entries.lock().expect("replay cache poisoned");
            if let Some(entry) = entries.get(&fingerprint) {
                return Ok(entry.response.clone());
            }
        }
        match &self.mode {
            Mode::Strict => Err(BackendError::ReplayMiss { fingerprint }),
            Mode::Record {
                deterministic_timestamps,
            } => {
                let inner = self
                    .inner
                    .as_ref()
                    .expect("record mode always holds an inner backend");
                let response = inner.send(request)?;
                let entry = CacheEntry {
                    fingerprint: fingerprint.clone(),
                    request: request.clone(),
                    response: response.clone(),
                    recorded_at: if *deterministic_timestamps {
                        "1970-01-01T00:00:00Z".to_string()
                    } else {
                        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
                    },
                };
                let mut entries = self.entries.lock().expect("replay cache poisoned");
                // A concurrent call may have recorded the same request first;
                // re-recording an identical request must stay a no-op.
                if !entries.contains_key(&fingerprint) {
                    self.append_entry(&entry)?;
                    entries.insert(fingerprint, entry);
                }
                Ok(response)
            }
        }
    }

    fn parallelism(&self) -> usize {
        match &self.mode {
            Mode::Strict => 4,
            Mode::Record { .. } => self
                .inner
                .as_ref()
                .map(|b| b.parallelism())
                .unwrap_or(1),
        }
    }
}

fn load_cache(path: &Path) -> Result<BTreeMap<String, CacheEntry>, BackendError> {
    let mut map = BTreeMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let text = std::fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CacheEntry = serde_json::from_str(line)
            .map_err(|e| BackendError::CacheCorrupt(format!("line {}: {e}", i + 1)))?;
        let expected = request_fingerprint(&entry.request);
        if entry.fingerprint != expected {
            return Err(BackendError::CacheCorrupt(format!(
                "line {}: fingerprint {} does not match its request snapshot",
                i + 1,
                entry.fingerprint
            )));
        }
        map.insert(entry.fingerprint.clone(), entry);
    }
    Ok(map)
}
