//! Content-addressed artifact store: plain files under one root, written
//! atomically (temp file then rename) and verified against their digest on
//! every read. Contracts are append-only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::dataset::{load_csv_bytes, CsvOptions, IngestError, SchemaFile, TabularDataset};
use crate::frontier::{Frontier, FrontierError, ModelArtifact};
use crate::policy::SelectionContract;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{kind} `{id}` fails its digest check")]
    DigestMismatch { kind: &'static str, id: String },
    #[error("contract `{0}` already exists")]
    AlreadyExists(String),
    #[error("invalid id `{0}`")]
    InvalidId(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset error: {0}")]
    Dataset(#[from] IngestError),
    #[error("frontier error: {0}")]
    Frontier(#[from] FrontierError),
}

/// Facts about a stored dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub n_rows: usize,
    pub dropped_rows: usize,
    pub label: String,
    pub protected: Vec<String>,
    pub columns: Vec<String>,
    pub has_bounds: bool,
}

impl DatasetSummary {
    fn of(id: &str, ds: &TabularDataset) -> Self {
        Self {
            id: id.to_string(),
            n_rows: ds.n_rows(),
            dropped_rows: ds.dropped_rows,
            label: ds.label.clone(),
            protected: ds.protected.clone(),
            columns: ds.schema.iter().map(|c| c.name.clone()).collect(),
            has_bounds: ds.has_bounds(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

const KINDS: [&str; 4] = ["datasets", "frontiers", "models", "contracts"];

fn check_id(id: &str) -> Result<(), StoreError> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(StoreError::InvalidId(id.to_string()));
    }
    Ok(())
}

/// Write through a temp file in the target directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8], clobber: bool) -> Result<(), StoreError> {
    let dir = path.parent().expect("store paths have a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    if clobber {
        tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
    } else {
        tmp.persist_noclobber(path).map_err(|e| {
            if e.error.kind() == std::io::ErrorKind::AlreadyExists {
                StoreError::AlreadyExists(path.file_stem().unwrap_or_default().to_string_lossy().into_owned())
            } else {
                StoreError::Io(e.error)
            }
        })?;
    }
    Ok(())
}

fn read_or_missing(path: &Path, kind: &'static str, id: &str) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => StoreError::NotFound { kind, id: id.to_string() },
        _ => StoreError::Io(e),
    })
}

impl Store {
    /// Open (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for k in KINDS {
            fs::create_dir_all(root.join(k))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: &str, id: &str, ext: &str) -> PathBuf {
        self.root.join(kind).join(format!("{id}.{ext}"))
    }

    /// Validate and store CSV bytes with their schema; the id is the
    /// digest of the parsed content.
    pub fn put_dataset(&self, csv: &[u8], schema: &SchemaFile) -> Result<DatasetSummary, StoreError> {
        let ds = load_csv_bytes(csv, schema, &CsvOptions::default())?;
        let id = ds.digest();
        let dir = self.root.join("datasets").join(&id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("data.csv"), csv, true)?;
        write_atomic(&dir.join("schema.json"), serde_json::to_string_pretty(schema)?.as_bytes(), true)?;
        Ok(DatasetSummary::of(&id, &ds))
    }

    pub fn get_dataset(&self, id: &str) -> Result<TabularDataset, StoreError> {
        check_id(id)?;
        let dir = self.root.join("datasets").join(id);
        let csv = read_or_missing(&dir.join("data.csv"), "dataset", id)?;
        let schema: SchemaFile = serde_json::from_slice(&read_or_missing(&dir.join("schema.json"), "dataset", id)?)?;
        let ds = load_csv_bytes(&csv, &schema, &CsvOptions::default())?;
        if ds.digest() != id {
            return Err(StoreError::DigestMismatch { kind: "dataset", id: id.to_string() });
        }
        Ok(ds)
    }

    pub fn dataset_summary(&self, id: &str) -> Result<DatasetSummary, StoreError> {
        Ok(DatasetSummary::of(id, &self.get_dataset(id)?))
    }

    /// Store a sealed frontier under its digest. Re-storing identical
    /// content is a no-op.
    pub fn put_frontier(&self, f: &Frontier) -> Result<String, StoreError> {
        let text = f.to_canonical()?;
        let parsed = Frontier::from_canonical(&text)?;
        let id = parsed.digest;
        write_atomic(&self.path("frontiers", &id, "json"), text.as_bytes(), true)?;
        Ok(id)
    }

    /// Raw stored text, unverified.
    pub fn frontier_text(&self, id: &str) -> Result<String, StoreError> {
        check_id(id)?;
        let bytes = read_or_missing(&self.path("frontiers", id, "json"), "frontier", id)?;
        String::from_utf8(bytes).map_err(|_| StoreError::DigestMismatch { kind: "frontier", id: id.to_string() })
    }

    pub fn get_frontier(&self, id: &str) -> Result<Frontier, StoreError> {
        let f = Frontier::from_canonical(&self.frontier_text(id)?)
            .map_err(|_| StoreError::DigestMismatch { kind: "frontier", id: id.to_string() })?;
        if f.digest != id {
            return Err(StoreError::DigestMismatch { kind: "frontier", id: id.to_string() });
        }
        Ok(f)
    }

    pub fn put_model(&self, m: &ModelArtifact) -> Result<String, StoreError> {
        let text = m.to_canonical();
        let id = canonical::sha256_hex(text.as_bytes());
        write_atomic(&self.path("models", &id, "json"), text.as_bytes(), true)?;
        Ok(id)
    }

    pub fn get_model(&self, id: &str) -> Result<ModelArtifact, StoreError> {
        check_id(id)?;
        let bytes = read_or_missing(&self.path("models", id, "json"), "model", id)?;
        if canonical::sha256_hex(&bytes) != id {
            return Err(StoreError::DigestMismatch { kind: "model", id: id.to_string() });
        }
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn has_model(&self, id: &str) -> bool {
        check_id(id).is_ok() && self.path("models", id, "json").is_file()
    }

    /// Append a contract; an existing id is never overwritten.
    pub fn put_contract(&self, c: &SelectionContract) -> Result<String, StoreError> {
        let text = c.to_canonical()?;
        check_id(&c.digest)?;
        write_atomic(&self.path("contracts", &c.digest, "json"), text.as_bytes(), false)?;
        Ok(c.digest.clone())
    }

    /// Raw stored bytes, unverified.
    pub fn contract_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        check_id(id)?;
        read_or_missing(&self.path("contracts", id, "json"), "contract", id)
    }

    pub fn get_contract(&self, id: &str) -> Result<SelectionContract, StoreError> {
        let bytes = self.contract_bytes(id)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| StoreError::DigestMismatch { kind: "contract", id: id.to_string() })?;
        match SelectionContract::from_canonical(text) {
            Ok(c) if c.digest == id => Ok(c),
            _ => Err(StoreError::DigestMismatch { kind: "contract", id: id.to_string() }),
        }
    }

    /// Path of a stored contract file (for inspection and tests).
    pub fn contract_path(&self, id: &str) -> PathBuf {
        self.path("contracts", id, "json")
    }

    pub fn frontier_path(&self, id: &str) -> PathBuf {
        self.path("frontiers", id, "json")
    }

    pub fn model_path(&self, id: &str) -> PathBuf {
        self.path("models", id, "json")
    }

    pub fn list(&self, kind: &str) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join(kind))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                let id = name.strip_suffix(".json").unwrap_or(&name).to_string();
                check_id(&id).is_ok().then_some(id)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "x,g,y\n1,a,0\n2,b,1\n3,a,1\n4,b,0\n";

    fn schema() -> SchemaFile {
        SchemaFile::from_json(
            r#"{"columns":[{"name":"x","kind":"numeric","bounds":[0,5]},{"name":"g","kind":"binary","categories":["a","b"]},
                {"name":"y","kind":"binary","categories":["0","1"]}],"label":"y","protected":["g"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let s = store.put_dataset(CSV.as_bytes(), &schema()).unwrap();
        assert_eq!(s.n_rows, 4);
        let ds = store.get_dataset(&s.id).unwrap();
        assert_eq!(ds.digest(), s.id);
        assert_eq!(store.list("datasets").unwrap(), vec![s.id.clone()]);
        fs::write(dir.path().join("datasets").join(&s.id).join("data.csv"), "x,g,y\n1,a,0\n2,b,1\n").unwrap();
        assert!(matches!(store.get_dataset(&s.id), Err(StoreError::DigestMismatch { .. })));
    }

    #[test]
    fn unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(store.get_frontier("abcd"), Err(StoreError::NotFound { .. })));
        assert!(matches!(store.get_dataset("../etc"), Err(StoreError::InvalidId(_))));
    }
}
