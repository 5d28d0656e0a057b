//! Content-addressed stage cache.
//!
//! A stage entry is keyed by the stage name plus content hashes of its
//! inputs and of the config subsection that shapes its output. Entries are
//! directories under `<root>/<stage>/<key>`; a marker file is written last
//! so a present marker means the entry is complete. Rebuilding with
//! identical inputs and config therefore reuses bit-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CoreResult, PipelineError};
use crate::types::{FundusImage, VesselMask};

const MARKER: &str = "complete.json";

/// Accumulates labeled content hashes into one cache key.
#[derive(Clone, Debug, Default)]
pub struct CacheKey {
    parts: Vec<(String, String)>,
}

impl CacheKey {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add an already-computed hash (or any stable token) under a label.
    pub fn part(mut self, label: &str, token: impl Into<String>) -> Self {
        self.parts.push((label.to_string(), token.into()));
        self
    }

    /// Add a serializable config subsection under a label.
    pub fn config<T: Serialize>(self, label: &str, value: &T) -> CoreResult<Self> {
        Ok(self.part(label, hash_json(value)?))
    }

    /// The combined digest (64 hex chars).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (label, token) in &self.parts {
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
            h.update((token.len() as u64).to_le_bytes());
            h.update(token.as_bytes());
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash arbitrary bytes.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash a serializable value via its canonical JSON encoding.
pub fn hash_json<T: Serialize>(value: &T) -> CoreResult<String> {
    let json = serde_json::to_vec(value)
        .map_err(|e| PipelineError::Data(format!("cannot hash config: {e}")))?;
    Ok(hash_bytes(&json))
}

/// Hash a file's contents.
pub fn hash_file(path: &Path) -> CoreResult<String> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Content hash of a set of graded images (id, dims, grade, pixels).
pub fn hash_images(images: &[FundusImage]) -> String {
    let mut h = Sha256::new();
    for img in images {
        h.update(img.id.as_bytes());
        h.update([0u8]);
        h.update((img.height() as u64).to_le_bytes());
        h.update((img.width() as u64).to_le_bytes());
        h.update([img.grade.map_or(0xff, |g| g)]);
        h.update(img.pixels.as_slice().expect("contiguous pixels"));
    }
    hex(&h.finalize())
}

/// Content hash of image/mask pairs.
pub fn hash_vessel_pairs(pairs: &[(FundusImage, VesselMask)]) -> String {
    let mut h = Sha256::new();
    for (img, mask) in pairs {
        h.update(img.id.as_bytes());
        h.update([0u8]);
        h.update((img.height() as u64).to_le_bytes());
        h.update((img.width() as u64).to_le_bytes());
        h.update(img.pixels.as_slice().expect("contiguous pixels"));
        h.update(mask.pixels.as_slice().expect("contiguous mask"));
    }
    hex(&h.finalize())
}

/// Directory-per-entry stage cache.
pub struct StageCache {
    root: PathBuf,
}

impl StageCache {
    /// Open (creating if needed) a cache rooted at `root`.
    pub fn open(root: &Path) -> CoreResult<Self> {
        fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
        Ok(StageCache { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_dir(&self, stage: &str, key: &CacheKey) -> PathBuf {
        self.root.join(stage).join(&key.digest()[..32])
    }

    /// Return the entry directory if a complete entry exists.
    pub fn lookup(&self, stage: &str, key: &CacheKey) -> Option<PathBuf> {
        let dir = self.entry_dir(stage, key);
        dir.join(MARKER).is_file().then_some(dir)
    }

    /// Reuse a complete entry or build one. `build` receives a working
    /// directory to fill; the entry becomes visible only after it returns
    /// successfully. Returns the entry directory and whether it was a hit.
    pub fn materialize(
        &self,
        stage: &str,
        key: &CacheKey,
        build: impl FnOnce(&Path) -> CoreResult<()>,
    ) -> CoreResult<(PathBuf, bool)> {
        if let Some(dir) = self.lookup(stage, key) {
            return Ok((dir, true));
        }
        let digest = key.digest();
        let final_dir = self.entry_dir(stage, key);
        let stage_dir = self.root.join(stage);
        fs::create_dir_all(&stage_dir).map_err(|e| PipelineError::io(&stage_dir, e))?;
        let tmp = stage_dir.join(format!(".tmp-{}", &digest[..32]));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
        build(&tmp)?;
        let marker = serde_json::json!({
            "stage": stage,
            "key": key.parts,
            "digest": digest,
            "created_at": crate::dataio::RunManifest::now_timestamp(),
        });
        fs::write(
            tmp.join(MARKER),
            serde_json::to_vec_pretty(&marker).expect("marker serializes"),
        )
        .map_err(|e| PipelineError::io(&tmp, e))?;
        if final_dir.exists() {
            // Someone else completed it while we built; prefer theirs.
            fs::remove_dir_all(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
            return Ok((final_dir, true));
        }
        fs::rename(&tmp, &final_dir).map_err(|e| PipelineError::io(&final_dir, e))?;
        Ok((final_dir, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_graded_image;

    #[test]
    fn second_materialize_is_a_hit_with_identical_content() {
        let tmp = tempdir("cache-hit");
        let cache = StageCache::open(&tmp).unwrap();
        let key = CacheKey::new().part("input", "abc").part("cfg", "def");
        let mut builds = 0;
        let (d1, hit1) = cache
            .materialize("stage-a", &key, |dir| {
                builds += 1;
                std::fs::write(dir.join("out.txt"), b"payload").unwrap();
                Ok(())
            })
            .unwrap();
        assert!(!hit1);
        let (d2, hit2) = cache
            .materialize("stage-a", &key, |_| {
                builds += 1;
                Ok(())
            })
            .unwrap();
        assert!(hit2);
        assert_eq!(builds, 1);
        assert_eq!(d1, d2);
        assert_eq!(std::fs::read(d2.join("out.txt")).unwrap(), b"payload");
        std::fs::remove_dir_all(&tmp).unwrap();
    }

    #[test]
    fn different_key_parts_produce_different_entries() {
        let k1 = CacheKey::new().part("input", "abc");
        let k2 = CacheKey::new().part("input", "abd");
        let k3 = CacheKey::new().part("inpu", "tabc");
        assert_ne!(k1.digest(), k2.digest());
        // Label/token boundaries are length-delimited, not concatenated.
        assert_ne!(k1.digest(), k3.digest());
    }

    #[test]
    fn failed_build_leaves_no_entry() {
        let tmp = tempdir("cache-fail");
        let cache = StageCache::open(&tmp).unwrap();
        let key = CacheKey::new().part("input", "xyz");
        let err = cache.materialize("stage-b", &key, |_| {
            Err(PipelineError::Train("boom".into()))
        });
        assert!(err.is_err());
        assert!(cache.lookup("stage-b", &key).is_none());
        // And a later successful build works (stale temp dir is cleared).
        let (_, hit) = cache
            .materialize("stage-b", &key, |dir| {
                std::fs::write(dir.join("ok"), b"1").unwrap();
                Ok(())
            })
            .unwrap();
        assert!(!hit);
        std::fs::remove_dir_all(&tmp).unwrap();
    }

    #[test]
    fn image_hash_tracks_content_and_grade() {
        let a = synth_graded_image("x", 32, 32, 1, 5).unwrap();
        let mut b = a.clone();
        assert_eq!(hash_images(&[a.clone()]), hash_images(&[b.clone()]));
        b.grade = Some(2);
        assert_ne!(hash_images(&[a.clone()]), hash_images(&[b.clone()]));
        b.grade = a.grade;
        b.pixels[[0, 0, 0]] ^= 1;
        assert_ne!(hash_images(&[a]), hash_images(&[b]));
    }

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "fundus-{tag}-{}",
            std::process::id()
        ));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).unwrap();
        }
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
