//! Run directory: the fixed artifact layout every pipeline stage reads and
//! writes, an exclusive lock file, and a canonical content hash that is
//! stable across wall-clock time, provider identity and worker scheduling.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{LatteError, Result};

/// Environment variable naming the default run directory.
pub const RUN_DIR_ENV: &str = "LATTE_RUN_DIR";

const LOCK_FILE: &str = "run.lock";

/// JSON keys excluded from the canonical hash: they legitimately differ
/// between reruns that are otherwise identical.
const VOLATILE_KEYS: [&str; 3] = ["created_at", "provider", "wall_ms"];

/// Resolves the run directory from an explicit flag, falling back to the
/// `LATTE_RUN_DIR` environment value.
pub fn resolve_run_dir(explicit: Option<PathBuf>, env_value: Option<String>) -> Result<PathBuf> {
    explicit
        .or(env_value.map(PathBuf::from))
        .ok_or_else(|| LatteError::Config(format!("no run directory: pass --run-dir or set {RUN_DIR_ENV}")))
}

/// Reads the environment and resolves the run directory.
pub fn run_dir_from_env(explicit: Option<PathBuf>) -> Result<PathBuf> {
    resolve_run_dir(explicit, std::env::var(RUN_DIR_ENV).ok())
}

/// Fixed artifact layout of one run.
#[derive(Debug, Clone)]
pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    /// Opens (creating if needed) the directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(RunDirectory { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn captions_path(&self) -> PathBuf {
        self.root.join("captions.jsonl")
    }

    pub fn czs_path(&self) -> PathBuf {
        self.root.join("czs_table.jsonl")
    }

    pub fn encoder_init_path(&self) -> PathBuf {
        self.root.join("encoder_init.json")
    }

    pub fn encoder_final_path(&self) -> PathBuf {
        self.root.join("encoder_final.json")
    }

    pub fn prototypes_path(&self) -> PathBuf {
        self.root.join("prototypes.json")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn train_state_path(&self) -> PathBuf {
        self.root.join("train_state.json")
    }

    pub fn eval_report_path(&self, split: &str) -> PathBuf {
        self.root.join(format!("eval_{split}.json"))
    }

    pub fn ablation_path(&self) -> PathBuf {
        self.root.join("ablation.json")
    }

    /// Takes the exclusive lock, failing if another process holds it.
    pub fn lock(&self) -> Result<RunLock> {
        let path = self.root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(LatteError::Locked(format!(
                    "{} (pid {})",
                    path.display(),
                    holder.trim()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// SHA-256 over the canonicalized contents of every artifact, keyed by
    /// relative path in sorted order. JSON files are reserialized with
    /// sorted keys and volatile fields removed; JSONL files additionally
    /// have their lines sorted, so caption arrival order does not matter.
    pub fn canonical_hash(&self) -> Result<String> {
        let mut files = Vec::new();
        collect_files(&self.root, &self.root, &mut files)?;
        files.sort();
        let mut hasher = Sha256::new();
        for rel in files {
            if rel == LOCK_FILE {
                continue;
            }
            let path = self.root.join(&rel);
            let bytes = std::fs::read(&path)?;
            let canonical = canonicalize_file(&rel, &bytes)?;
            hasher.update(rel.as_bytes());
            hasher.update([0u8]);
            hasher.update(&canonical);
            hasher.update([0u8]);
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entry under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

fn strip_volatile(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for key in VOLATILE_KEYS {
                map.remove(key);
            }
            for v in map.values_mut() {
                strip_volatile(v);
            }
        }
        Value::Array(items) => {
            for v in items.iter_mut() {
                strip_volatile(v);
            }
        }
        _ => {}
    }
}

fn canonicalize_file(rel: &str, bytes: &[u8]) -> Result<Vec<u8>> {
    if rel.ends_with(".jsonl") {
        let text = String::from_utf8_lossy(bytes);
        let mut lines = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Value>(line) {
                Ok(mut v) => {
                    strip_volatile(&mut v);
                    lines.push(serde_json::to_string(&v)?);
                }
                Err(_) => lines.push(line.to_string()),
            }
        }
        lines.sort();
        Ok((lines.join("\n") + "\n").into_bytes())
    } else if rel.ends_with(".json") {
        match serde_json::from_slice::<Value>(bytes) {
            Ok(mut v) => {
                strip_volatile(&mut v);
                Ok(serde_json::to_vec(&v)?)
            }
            Err(_) => Ok(bytes.to_vec()),
        }
    } else {
        Ok(bytes.to_vec())
    }
}

/// Held lock; the file is removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
