//! Additive multiresolution octree: build, tile format, manifest and reads.

mod build;
mod code;
mod decimate;
mod manifest;
pub mod tile;

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::ingest::IngestError;
use crate::point::PointRecord;

pub use self::build::{build_index, BuildConfig};
pub use self::code::{child_bounds, octant_of, InvalidNodeCode, NodeCode};
pub use self::decimate::decimate;
pub use self::manifest::{
    tile_attributes, Attribute, IndexManifest, OctreeNode, MANIFEST_FILE, MANIFEST_VERSION,
    NODES_DIR,
};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("out of disk space: {0}")]
    OutOfDiskSpace(io::Error),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("tile {code} corrupt: expected {expected} bytes, found {found}")]
    TileCorrupt {
        code: String,
        expected: u64,
        found: u64,
    },
    #[error("manifest corrupt: {0}")]
    ManifestCorrupt(String),
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error("source has no points")]
    EmptySource,
    #[error("source does not match its summary: {0}")]
    SourceMismatch(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for IndexError {
    fn from(e: io::Error) -> Self {
        // ENOSPC
        if e.kind() == io::ErrorKind::StorageFull || e.raw_os_error() == Some(28) {
            IndexError::OutOfDiskSpace(e)
        } else {
            IndexError::Io(e)
        }
    }
}

impl IndexError {
    pub fn code(&self) -> &'static str {
        match self {
            IndexError::OutOfDiskSpace(_) => "OutOfDiskSpace",
            IndexError::UnknownNode(_) => "UnknownNode",
            IndexError::TileCorrupt { .. } => "TileCorrupt",
            IndexError::ManifestCorrupt(_) => "ManifestCorrupt",
            IndexError::InvalidConfig(_) => "InvalidConfig",
            IndexError::EmptySource => "EmptySource",
            IndexError::SourceMismatch(_) => "SourceMismatch",
            IndexError::Ingest(e) => e.code(),
            IndexError::Io(_) => "IO",
        }
    }
}

/// Decodes the tile of `code` from an index directory.
pub fn read_node(
    dir: &Path,
    manifest: &IndexManifest,
    code: &NodeCode,
) -> Result<Vec<PointRecord>, IndexError> {
    let node = manifest
        .node(code)
        .ok_or_else(|| IndexError::UnknownNode(code.to_string()))?;
    let bytes = fs::read(dir.join(NODES_DIR).join(node.file_name()))?;
    if bytes.len() as u64 != node.byte_length() {
        return Err(IndexError::TileCorrupt {
            code: code.to_string(),
            expected: node.byte_length(),
            found: bytes.len() as u64,
        });
    }
    Ok(tile::decode_all(&bytes, node.aabb.min))
}

/// Streams the records of the tile of `code` without loading it whole.
pub fn stream_node(
    dir: &Path,
    manifest: &IndexManifest,
    code: &NodeCode,
) -> Result<NodeReader, IndexError> {
    let node = manifest
        .node(code)
        .ok_or_else(|| IndexError::UnknownNode(code.to_string()))?;
    let file = fs::File::open(dir.join(NODES_DIR).join(node.file_name()))?;
    let found = file.metadata()?.len();
    if found != node.byte_length() {
        return Err(IndexError::TileCorrupt {
            code: code.to_string(),
            expected: node.byte_length(),
            found,
        });
    }
    Ok(NodeReader {
        inner: io::BufReader::with_capacity(1 << 16, file),
        origin: node.aabb.min,
        left: node.count,
    })
}

/// Iterator over the decoded records of one tile.
pub struct NodeReader {
    inner: io::BufReader<fs::File>,
    origin: [f64; 3],
    left: u32,
}

impl Iterator for NodeReader {
    type Item = Result<PointRecord, IndexError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.left == 0 {
            return None;
        }
        let mut rec = [0u8; tile::RECORD_SIZE];
        if let Err(e) = io::Read::read_exact(&mut self.inner, &mut rec) {
            self.left = 0;
            return Some(Err(e.into()));
        }
        self.left -= 1;
        Some(Ok(tile::decode(&rec, self.origin)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.left as usize, Some(self.left as usize))
    }
}

/// Read access to decoded nodes of an index.
pub trait NodeSource: Sync {
    fn manifest(&self) -> &IndexManifest;
    fn node_points(&self, code: &NodeCode) -> Result<Arc<Vec<PointRecord>>, IndexError>;
}

/// An index on disk with a cache of decoded nodes. Safe to share between
/// threads.
pub struct TileSet {
    dir: PathBuf,
    manifest: IndexManifest,
    cache: Mutex<HashMap<NodeCode, Arc<Vec<PointRecord>>>>,
}

impl TileSet {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, IndexError> {
        let dir = dir.into();
        let manifest = IndexManifest::load(&dir)?;
        Ok(TileSet {
            dir,
            manifest,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Every stored point, node by node in manifest order.
    pub fn traverse(&self) -> Result<Vec<(NodeCode, PointRecord)>, IndexError> {
        let mut out = Vec::with_capacity(self.manifest.total_points as usize);
        for n in &self.manifest.nodes {
            for p in read_node(&self.dir, &self.manifest, &n.code)? {
                out.push((n.code.clone(), p));
            }
        }
        Ok(out)
    }
}

impl NodeSource for TileSet {
    fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    fn node_points(&self, code: &NodeCode) -> Result<Arc<Vec<PointRecord>>, IndexError> {
        if let Some(p) = self.cache.lock().unwrap().get(code) {
            return Ok(p.clone());
        }
        let pts = Arc::new(read_node(&self.dir, &self.manifest, code)?);
        self.cache.lock().unwrap().insert(code.clone(), pts.clone());
        Ok(pts)
    }
}

/// Index held entirely in memory; handy for tests and small clouds.
pub struct MemoryIndex {
    manifest: IndexManifest,
    nodes: HashMap<NodeCode, Arc<Vec<PointRecord>>>,
}

impl MemoryIndex {
    pub fn new(manifest: IndexManifest, nodes: HashMap<NodeCode, Vec<PointRecord>>) -> Self {
        MemoryIndex {
            manifest,
            nodes: nodes.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
        }
    }

    pub fn load(src: &TileSet) -> Result<Self, IndexError> {
        let mut nodes = HashMap::new();
        for n in &src.manifest().nodes {
            nodes.insert(n.code.clone(), src.node_points(&n.code)?);
        }
        Ok(MemoryIndex {
            manifest: src.manifest().clone(),
            nodes,
        })
    }
}

impl NodeSource for MemoryIndex {
    fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    fn node_points(&self, code: &NodeCode) -> Result<Arc<Vec<PointRecord>>, IndexError> {
        self.nodes
            .get(code)
            .cloned()
            .ok_or_else(|| IndexError::UnknownNode(code.to_string()))
    }
}
