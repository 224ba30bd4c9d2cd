//! On-disk cache for explored balls.
//!
//! Entries are keyed by a digest of the canonical space text, the radius, and
//! the word-problem strategy, so a cache hit is exactly a rebuild. Files are
//! written to a temp name and renamed into place.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::presentation::{print_space_spec, SpaceSpec};
use crate::space::{build_ball_with, BuildOptions, SpaceError, SpaceGraph};
use crate::wordproblem::WordProblem;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EntryStatus {
    Valid,
    Corrupt,
    /// Readable but its digest does not match its file name.
    Mismatched,
}

#[derive(Clone, Debug)]
pub struct CacheEntry {
    pub file: PathBuf,
    pub bytes: u64,
    pub status: EntryStatus,
    /// Radius stored in the payload, when readable.
    pub radius: Option<u32>,
}

pub struct BallCache {
    root: PathBuf,
}

/// Digest of everything that determines a build's output.
pub fn cache_key(space: &SpaceSpec, radius: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(print_space_spec(space).as_bytes());
    h.update(radius.to_le_bytes());
    let wp = WordProblem::new(&crate::space::effective_group(space));
    h.update(wp.kind().name().as_bytes());
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{:02x}", b));
    }
    s
}

impl BallCache {
    pub fn new(root: impl Into<PathBuf>) -> BallCache {
        BallCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &[u8; 32]) -> PathBuf {
        self.root.join(format!("{}.ball", hex(&key[..16])))
    }

    /// Stored graph for this space and radius, or None on miss, digest
    /// mismatch, or corruption (stale entries never surface).
    pub fn load(&self, space: &SpaceSpec, radius: u32) -> Option<SpaceGraph> {
        let key = cache_key(space, radius);
        let path = self.path_for(&key);
        let bytes = fs::read(&path).ok()?;
        match SpaceGraph::from_bytes(space, &bytes) {
            Ok((g, digest)) if digest == key && g.radius() == radius => Some(g),
            _ => None,
        }
    }

    /// Writes the graph under its key via a temp file and rename.
    pub fn store(&self, g: &SpaceGraph) -> Result<PathBuf, CacheError> {
        fs::create_dir_all(&self.root)?;
        let key = cache_key(g.space(), g.radius());
        let path = self.path_for(&key);
        let tmp = self.root.join(format!(".tmp-{}-{}", std::process::id(), hex(&key[..8])));
        fs::write(&tmp, g.to_bytes(&key))?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Cache hit or a fresh build that is stored before returning.
    pub fn get_or_build(
        &self,
        space: &SpaceSpec,
        radius: u32,
        opts: &BuildOptions,
    ) -> Result<SpaceGraph, CacheError> {
        if let Some(g) = self.load(space, radius) {
            return Ok(g);
        }
        let g = build_ball_with(space, radius, opts)?;
        self.store(&g)?;
        Ok(g)
    }

    /// All .ball files under the root with their status, sorted by file name.
    /// Status checks the header digest against the file name; full payload
    /// validation happens at load time against the requesting space.
    pub fn entries(&self) -> Result<Vec<CacheEntry>, CacheError> {
        let mut out = Vec::new();
        let rd = match fs::read_dir(&self.root) {
            Ok(rd) => rd,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for entry in rd {
            let entry = entry?;
            let path = entry.path();
            if path.extension().map_or(true, |e| e != "ball") {
                continue;
            }
            let bytes = fs::read(&path)?;
            let status;
            let mut radius = None;
            // Header: magic(4) version(4) digest(32) radius(4).
            if bytes.len() >= 44 && &bytes[..4] == b"GLBC" {
                let named = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .map(|s| s.to_string())
                    .unwrap_or_default();
                let stored = hex(&bytes[8..24]);
                radius = Some(u32::from_le_bytes([bytes[40], bytes[41], bytes[42], bytes[43]]));
                status = if named == stored { EntryStatus::Valid } else { EntryStatus::Mismatched };
            } else {
                status = EntryStatus::Corrupt;
            }
            out.push(CacheEntry { file: path, bytes: bytes.len() as u64, status, radius });
        }
        out.sort_by(|a, b| a.file.cmp(&b.file));
        Ok(out)
    }

    /// Removes every cache file; returns how many were deleted.
    pub fn clear(&self) -> Result<usize, CacheError> {
        let mut removed = 0;
        for e in self.entries()? {
            fs::remove_file(&e.file)?;
            removed += 1;
        }
        Ok(removed)
    }
}
