//! Append-only caption cache: one JSON record per line, last writer wins
//! per (image_id, kind, class_id) key.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::CaptionKind;

pub const CAPTION_FORMAT_VERSION: u32 = 1;

pub type CaptionKey = (String, CaptionKind, Option<usize>);

/// One synthesized description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub kind: CaptionKind,
    /// Pseudo-label class the caption was generated for; null for the
    /// image kind, which is label-independent.
    pub class_id: Option<usize>,
    pub text: String,
    #[serde(default)]
    pub group_member_ids: Vec<String>,
    pub provider: String,
    pub created_at: u64,
    pub format_version: u32,
}

impl CaptionRecord {
    pub fn key(&self) -> CaptionKey {
        (self.image_id.clone(), self.kind, self.class_id)
    }
}

/// In-memory index over an append-only JSONL log.
#[derive(Debug)]
pub struct CaptionCache {
    path: Option<PathBuf>,
    records: Vec<CaptionRecord>,
    index: HashMap<CaptionKey, usize>,
    corrupt_lines: usize,
}

impl CaptionCache {
    /// Cache with no backing file; puts are memory-only.
    pub fn in_memory() -> Self {
        CaptionCache {
            path: None,
            records: Vec::new(),
            index: HashMap::new(),
            corrupt_lines: 0,
        }
    }

    /// Opens (or creates) a file-backed cache, replaying the existing log.
    /// Malformed lines are skipped with a warning and counted.
    pub fn open(path: &Path) -> Result<Self> {
        let mut cache = CaptionCache {
            path: Some(path.to_path_buf()),
            records: Vec::new(),
            index: HashMap::new(),
            corrupt_lines: 0,
        };
        if path.exists() {
            let reader = BufReader::new(std::fs::File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CaptionRecord>(&line) {
                    Ok(rec) => cache.insert(rec),
                    Err(e) => {
                        log::warn!("caption cache {}:{}: skipping malformed line: {e}", path.display(), lineno + 1);
                        cache.corrupt_lines += 1;
                    }
                }
            }
        }
        Ok(cache)
    }

    fn insert(&mut self, rec: CaptionRecord) {
        let key = rec.key();
        self.records.push(rec);
        self.index.insert(key, self.records.len() - 1);
    }

    /// Appends a record to the log and the index (last writer wins).
    pub fn put(&mut self, rec: CaptionRecord) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        self.insert(rec);
        Ok(())
    }

    pub fn get(&self, key: &CaptionKey) -> Option<&CaptionRecord> {
        self.index.get(key).map(|&i| &self.records[i])
    }

    pub fn contains(&self, key: &CaptionKey) -> bool {
        self.index.contains_key(key)
    }

    /// Live records (one per key) in insertion order, filtered by kind
    /// and/or class.
    pub fn scan(
        &self,
        kind: Option<CaptionKind>,
        class_id: Option<usize>,
    ) -> impl Iterator<Item = &CaptionRecord> {
        let index = &self.index;
        let records = &self.records;
        self.records
            .iter()
            .enumerate()
            .filter(move |(i, rec)| {
                index.get(&rec.key()) == Some(i)
                    && kind.map_or(true, |k| rec.kind == k)
                    && class_id.map_or(true, |c| rec.class_id == Some(c))
            })
            .map(move |(i, _)| &records[i])
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    /// Live records sorted by key, for worker-count-independent comparison.
    pub fn canonical_dump(&self) -> Vec<&CaptionRecord> {
        let mut live: Vec<&CaptionRecord> = self.scan(None, None).collect();
        live.sort_by(|a, b| a.key().cmp(&b.key()));
        live
    }
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn rec(image_id: &str, kind: CaptionKind, class_id: Option<usize>, text: &str) -> CaptionRecord {
        CaptionRecord {
            image_id: image_id.into(),
            kind,
            class_id,
            text: text.into(),
            group_member_ids: if kind == CaptionKind::Group {
                vec![image_id.into()]
            } else {
                Vec::new()
            },
            provider: "stub".into(),
            created_at: 0,
            format_version: CAPTION_FORMAT_VERSION,
        }
    }

    #[test]
    fn put_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = CaptionCache::open(&dir.path().join("c.jsonl")).unwrap();
        let r = rec("img1", CaptionKind::Image, None, "a dog");
        cache.put(r.clone()).unwrap();
        assert_eq!(cache.get(&r.key()), Some(&r));
    }

    #[test]
    fn second_put_wins() {
        let mut cache = CaptionCache::in_memory();
        let r1 = rec("img1", CaptionKind::Group, Some(2), "first");
        let mut r2 = r1.clone();
        r2.text = "second".into();
        cache.put(r1.clone()).unwrap();
        cache.put(r2.clone()).unwrap();
        assert_eq!(cache.get(&r1.key()).unwrap().text, "second");
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn reload_preserves_last_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        {
            let mut cache = CaptionCache::open(&path).unwrap();
            cache.put(rec("img1", CaptionKind::Image, None, "old")).unwrap();
            cache.put(rec("img1", CaptionKind::Image, None, "new")).unwrap();
        }
        let cache = CaptionCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(
            cache.get(&("img1".into(), CaptionKind::Image, None)).unwrap().text,
            "new"
        );
    }

    #[test]
    fn malformed_lines_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = serde_json::to_string(&rec("img1", CaptionKind::Image, None, "ok")).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n{{\"half\":1}}\n")).unwrap();
        let cache = CaptionCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.corrupt_lines(), 2);
    }

    #[test]
    fn scan_filters_by_kind_and_class() {
        let mut cache = CaptionCache::in_memory();
        cache.put(rec("a", CaptionKind::Image, None, "x")).unwrap();
        cache.put(rec("a", CaptionKind::Group, Some(0), "y")).unwrap();
        cache.put(rec("b", CaptionKind::Group, Some(1), "z")).unwrap();
        assert_eq!(cache.scan(Some(CaptionKind::Group), None).count(), 2);
        assert_eq!(cache.scan(Some(CaptionKind::Group), Some(1)).count(), 1);
        assert_eq!(cache.scan(None, None).count(), 3);
    }

    #[test]
    fn large_round_trip_hash_stable_across_rewrite() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("c1.jsonl");
        let p2 = dir.path().join("c2.jsonl");
        let mut c1 = CaptionCache::open(&p1).unwrap();
        for i in 0..10_000 {
            c1.put(rec(&format!("img{i}"), CaptionKind::Image, None, &format!("text {i}")))
                .unwrap();
        }
        // rewrite: replay into a fresh file
        let reloaded = CaptionCache::open(&p1).unwrap();
        let mut c2 = CaptionCache::open(&p2).unwrap();
        for r in reloaded.scan(None, None) {
            c2.put(r.clone()).unwrap();
        }
        let h1 = Sha256::digest(std::fs::read(&p1).unwrap());
        let h2 = Sha256::digest(std::fs::read(&p2).unwrap());
        assert_eq!(h1, h2);
    }
}
