//! Content-addressed embedding cache keyed by (embedder id, sha256 of text).
//!
//! On disk each embedder gets its own directory holding `vectors.bin`
//! (rows of little-endian f64) and a plain-text `index.txt`:
//!
//! ```text
//! embedder <id>
//! dim <d>
//! <sha256 hex> <row>
//! ```
//!
//! Data rows are appended before their index lines, so a crash can leave an
//! orphan row but never an index entry pointing at missing bytes.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const INDEX_FILE: &str = "index.txt";
const DATA_FILE: &str = "vectors.bin";

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Default)]
struct Shelf {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
    /// Number of rows already in `vectors.bin`.
    stored: usize,
}

/// Concurrent readers, serialized writers.
#[derive(Debug)]
pub struct EmbeddingCache {
    root: Option<PathBuf>,
    shelves: RwLock<HashMap<String, Shelf>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            shelves: RwLock::new(HashMap::new()),
        }
    }

    /// Opens (creating if needed) a cache directory and loads every shelf.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let mut shelves = HashMap::new();
        for entry in fs::read_dir(root)? {
            let dir = entry?.path();
            if dir.join(INDEX_FILE).is_file() {
                let (id, shelf) = load_shelf(&dir)?;
                shelves.insert(id, shelf);
            }
        }
        Ok(Self {
            root: Some(root.to_path_buf()),
            shelves: RwLock::new(shelves),
        })
    }

    fn read(&self) -> RwLockReadGuard<'_, HashMap<String, Shelf>> {
        self.shelves.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, HashMap<String, Shelf>> {
        self.shelves.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Dimension recorded for `embedder`, if it has been seen.
    pub fn dim(&self, embedder: &str) -> Option<usize> {
        self.read().get(embedder).map(|s| s.dim)
    }

    pub fn len(&self, embedder: &str) -> usize {
        self.read().get(embedder).map_or(0, |s| s.rows.len())
    }

    pub fn get(&self, embedder: &str, text: &str) -> Option<Vec<f64>> {
        self.get_hashed(embedder, &text_hash(text))
    }

    pub(crate) fn get_hashed(&self, embedder: &str, hash: &str) -> Option<Vec<f64>> {
        self.read().get(embedder)?.rows.get(hash).cloned()
    }

    /// Stores vectors for texts. Texts already cached keep their original
    /// vector so hits stay bit-identical. A vector whose length disagrees
    /// with the embedder's known dimension is an integrity error and
    /// nothing from the call is stored.
    pub fn insert(&self, embedder: &str, entries: &[(String, Vec<f64>)]) -> Result<()> {
        if embedder.is_empty() || embedder.contains(['\n', '\r']) {
            return Err(Error::Config(format!("invalid embedder id {embedder:?}")));
        }
        let Some(first) = entries.first() else {
            return Ok(());
        };
        let mut shelves = self.write();
        let known = shelves.get(embedder).map(|s| s.dim);
        let dim = known.unwrap_or(first.1.len());
        if dim == 0 {
            return Err(Error::Integrity(format!(
                "embedder '{embedder}' returned an empty vector"
            )));
        }
        if let Some(bad) = entries.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Integrity(format!(
                "embedder '{embedder}' has dimension {dim} but produced a {}-dimensional vector",
                bad.1.len()
            )));
        }
        if let Some((t, _)) = entries
            .iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Integrity(format!(
                "embedder '{embedder}' produced a non-finite vector for text {:?}",
                truncate(t)
            )));
        }

        let shelf = shelves
            .entry(embedder.to_string())
            .or_insert_with(|| Shelf {
                dim,
                ..Shelf::default()
            });
        let mut fresh: Vec<(String, &Vec<f64>)> = Vec::new();
        for (text, v) in entries {
            let h = text_hash(text);
            if !shelf.rows.contains_key(&h) && !fresh.iter().any(|(f, _)| *f == h) {
                fresh.push((h, v));
            }
        }
        if fresh.is_empty() {
            return Ok(());
        }
        if let Some(root) = &self.root {
            append_rows(
                &shelf_dir(root, embedder),
                embedder,
                dim,
                shelf.stored,
                &fresh,
            )?;
            shelf.stored += fresh.len();
        }
        for (h, v) in fresh {
            shelf.rows.insert(h, v.clone());
        }
        Ok(())
    }
}

fn truncate(t: &str) -> String {
    t.chars().take(40).collect()
}

fn shelf_dir(root: &Path, embedder: &str) -> PathBuf {
    // ids may contain path separators; address the directory by hash
    root.join(&text_hash(embedder)[..16])
}

fn append_rows(
    dir: &Path,
    embedder: &str,
    dim: usize,
    start: usize,
    rows: &[(String, &Vec<f64>)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let index_path = dir.join(INDEX_FILE);
    let new_index = !index_path.exists();

    let mut bytes = Vec::with_capacity(rows.len() * dim * 8);
    for (_, v) in rows {
        for x in v.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut data = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(DATA_FILE))?;
    data.write_all(&bytes)?;
    data.sync_all()?;

    let mut lines = String::new();
    if new_index {
        lines.push_str(&format!("embedder {embedder}\ndim {dim}\n"));
    }
    for (i, (h, _)) in rows.iter().enumerate() {
        lines.push_str(&format!("{h} {}\n", start + i));
    }
    let mut index = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&index_path)?;
    index.write_all(lines.as_bytes())?;
    index.sync_all()?;
    Ok(())
}

fn load_shelf(dir: &Path) -> Result<(String, Shelf)> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path)?;
    let bad = |line: usize, detail: &str| Error::Parse {
        path: index_path.clone(),
        line,
        detail: detail.to_string(),
    };
    let mut lines = text.lines();
    let id = lines
        .next()
        .and_then(|l| l.strip_prefix("embedder "))
        .ok_or_else(|| bad(1, "expected 'embedder <id>'"))?
        .to_string();
    let dim: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("dim "))
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| bad(2, "expected 'dim <d>'"))?;

    let data = match fs::read(dir.join(DATA_FILE)) {
        Ok(d) => d,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let row_bytes = dim * 8;
    let stored = data.len() / row_bytes;
    if data.len() % row_bytes != 0 {
        return Err(Error::Integrity(format!(
            "{} is not a whole number of {dim}-dimensional rows",
            dir.join(DATA_FILE).display()
        )));
    }

    let mut rows = HashMap::new();
    for (i, l) in lines.enumerate() {
        let line = i + 3;
        let (h, r) = l
            .split_once(' ')
            .ok_or_else(|| bad(line, "expected '<hash> <row>'"))?;
        let r: usize = r.parse().map_err(|_| bad(line, "row is not an integer"))?;
        if r >= stored {
            return Err(Error::Integrity(format!(
                "{}:{line}: row {r} beyond the {stored} stored rows",
                index_path.display()
            )));
        }
        let v = data[r * row_bytes..(r + 1) * row_bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        rows.insert(h.to_string(), v);
    }
    Ok((id, Shelf { dim, rows, stored }))
}
