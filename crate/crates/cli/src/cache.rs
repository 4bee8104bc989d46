//! Per-clip feature cache with content-hash invalidation, and the advisory
//! lock that keeps two commands from writing one output directory.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mam_core::dsp::{read_feature_cache, write_feature_cache, FeatureConfig, FrameSequence};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Canonical text of every feature setting.
pub fn feature_fingerprint(features: &FeatureConfig) -> String {
    let cfg = RunConfig { features: features.clone(), ..RunConfig::default() };
    RunConfig::keys()
        .filter(|k| k.starts_with("features."))
        .map(|k| format!("{k}={}\n", cfg.get(k).expect("known key")))
        .collect()
}

/// SHA-256 over the clip bytes followed by the feature fingerprint.
pub fn content_hash(audio: &[u8], fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update((audio.len() as u64).to_le_bytes());
    h.update(audio);
    h.update(fingerprint.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, clip_id: &str) -> PathBuf {
        self.dir.join(format!("{clip_id}.mcfe"))
    }

    fn hash_path(&self, clip_id: &str) -> PathBuf {
        self.dir.join(format!("{clip_id}.mcfe.sha256"))
    }

    /// True when the stored entry was built from content with this hash.
    pub fn is_fresh(&self, clip_id: &str, hash: &str) -> bool {
        self.path(clip_id).is_file()
            && fs::read_to_string(self.hash_path(clip_id)).is_ok_and(|stored| stored.trim() == hash)
    }

    pub fn store(&self, clip_id: &str, seq: &FrameSequence, hash: &str) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let final_path = self.path(clip_id);
        let tmp = self.dir.join(format!(".{clip_id}.mcfe.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
            write_feature_cache(&mut w, seq)?;
            w.flush()?;
        }
        fs::rename(&tmp, &final_path).with_context(|| format!("moving {} into place", final_path.display()))?;
        fs::write(self.hash_path(clip_id), format!("{hash}\n"))?;
        Ok(())
    }

    pub fn load(&self, clip_id: &str) -> Result<FrameSequence> {
        let path = self.path(clip_id);
        let file = File::open(&path).with_context(|| {
            format!("feature cache for clip `{clip_id}` is missing at {}; run `mam extract` first", path.display())
        })?;
        read_feature_cache(BufReader::new(file)).with_context(|| format!("reading features of clip `{clip_id}`"))
    }
}

/// Exclusive advisory lock on a directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".mam.lock";

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is locked by another command (remove {} if no command is running)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
