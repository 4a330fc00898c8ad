use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Environment variable naming the score-matrix cache directory.
pub const CACHE_ENV: &str = "DOCIE_CACHE";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    doc_id: String,
    scorer: String,
    surfaces: Vec<String>,
    scores: Tensor,
}

/// On-disk cache of pairwise score matrices keyed by document id and scorer
/// checksum. Entries also record the mention surfaces they were computed
/// for; a mismatch is treated as a miss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreCache {
    dir: PathBuf,
}

impl ScoreCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ScoreCache { dir: dir.into() }
    }

    /// Cache rooted at `$DOCIE_CACHE`, if set and non-empty.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(ScoreCache::new)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, doc_id: &str, scorer: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(doc_id.as_bytes());
        h.update([0]);
        h.update(scorer.as_bytes());
        self.dir.join(format!("{}.json", hex::encode(h.finalize())))
    }

    pub fn get<S: AsRef<str>>(&self, doc_id: &str, scorer: &str, surfaces: &[S]) -> Option<Tensor> {
        let text = fs::read_to_string(self.path(doc_id, scorer)).ok()?;
        let e: Entry = serde_json::from_str(&text).ok()?;
        let same = e.doc_id == doc_id
            && e.scorer == scorer
            && e.surfaces.len() == surfaces.len()
            && e.surfaces.iter().zip(surfaces).all(|(a, b)| a == b.as_ref());
        same.then_some(e.scores)
    }

    pub fn put<S: AsRef<str>>(&self, doc_id: &str, scorer: &str, surfaces: &[S], scores: &Tensor) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let entry = Entry {
            doc_id: doc_id.to_string(),
            scorer: scorer.to_string(),
            surfaces: surfaces.iter().map(|s| s.as_ref().to_string()).collect(),
            scores: scores.clone(),
        };
        let path = self.path(doc_id, scorer);
        let text = serde_json::to_string(&entry).map_err(|e| Error::Other(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_miss_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScoreCache::new(dir.path());
        let m = Tensor::from_rows(&[vec![1.0, 0.25], vec![0.25, 1.0]]);
        assert!(cache.get("d", "abc", &["x", "y"]).is_none());
        cache.put("d", "abc", &["x", "y"], &m).unwrap();
        assert_eq!(cache.get("d", "abc", &["x", "y"]), Some(m));
        assert!(cache.get("d", "abd", &["x", "y"]).is_none());
        assert!(cache.get("d", "abc", &["x", "z"]).is_none());
    }
}
