use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::store::write_atomic;
use crate::error::{Error, Result};

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one stage run. Paths are relative to the work directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Written alongside the outputs but not reproducible (timings).
    #[serde(default)]
    pub logs: Vec<String>,
}

impl Manifest {
    pub fn path(work: &Path, stage: &str) -> PathBuf {
        work.join("manifests").join(format!("{stage}.json"))
    }

    pub fn load(work: &Path, stage: &str) -> Result<Option<Manifest>> {
        let p = Self::path(work, stage);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn save(&self, work: &Path) -> Result<()> {
        let p = Self::path(work, &self.stage);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_atomic(&p, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

pub fn hash_all(work: &Path, rel: &[String]) -> Result<BTreeMap<String, String>> {
    rel.iter()
        .map(|r| Ok((r.clone(), file_hash(&work.join(r))?)))
        .collect()
}
