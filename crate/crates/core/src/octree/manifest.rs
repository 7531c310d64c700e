use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IndexError, NodeCode};
use crate::point::Aabb;

pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NODES_DIR: &str = "nodes";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub size: u32,
}

pub fn tile_attributes() -> Vec<Attribute> {
    let a = |name: &str, ty: &str, size| Attribute {
        name: name.into(),
        ty: ty.into(),
        size,
    };
    vec![
        a("position", "float32", 12),
        a("rgb", "uint8", 3),
        a("intensity", "uint16", 2),
        a("classification", "uint8", 1),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OctreeNode {
    pub code: NodeCode,
    pub count: u32,
    pub aabb: Aabb,
    /// Set on nodes at the depth limit that had to waive the sampling grid.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub overflow: bool,
}

impl OctreeNode {
    pub fn level(&self) -> u32 {
        self.code.level()
    }

    pub fn file_name(&self) -> String {
        format!("{}.bin", self.code)
    }

    pub fn byte_length(&self) -> u64 {
        self.count as u64 * super::tile::RECORD_SIZE as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IndexManifest {
    pub version: String,
    pub aabb: Aabb,
    pub root_spacing: f64,
    pub total_points: u64,
    pub attributes: Vec<Attribute>,
    pub entwine_mode: bool,
    pub nodes: Vec<OctreeNode>,
}

impl IndexManifest {
    pub fn node(&self, code: &NodeCode) -> Option<&OctreeNode> {
        self.nodes
            .binary_search_by(|n| order_key(&n.code).cmp(&order_key(code)))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn spacing_at(&self, level: u32) -> f64 {
        self.root_spacing / (1u64 << level) as f64
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.level()).max().unwrap_or(0)
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(dir.join(MANIFEST_FILE))?;
        let m: IndexManifest = serde_json::from_slice(&bytes)
            .map_err(|e| IndexError::ManifestCorrupt(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(IndexError::ManifestCorrupt(format!(
                "manifest version {:?}, expected {MANIFEST_VERSION:?}",
                m.version
            )));
        }
        if !m
            .nodes
            .windows(2)
            .all(|w| order_key(&w[0].code) < order_key(&w[1].code))
        {
            return Err(IndexError::ManifestCorrupt(
                "nodes are not in level order".into(),
            ));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    /// Checks the structural invariants: counts add up to the total and
    /// every non-root node has its parent listed.
    pub fn validate(&self) -> Result<(), IndexError> {
        let sum: u64 = self.nodes.iter().map(|n| n.count as u64).sum();
        if sum != self.total_points {
            return Err(IndexError::ManifestCorrupt(format!(
                "node counts sum to {sum}, total is {}",
                self.total_points
            )));
        }
        for n in &self.nodes {
            if n.count == 0 {
                return Err(IndexError::ManifestCorrupt(format!(
                    "empty node {}",
                    n.code
                )));
            }
            if let Some(p) = n.code.parent() {
                if self.node(&p).is_none() {
                    return Err(IndexError::ManifestCorrupt(format!(
                        "node {} has no parent entry",
                        n.code
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Manifest order: breadth first, then by code.
pub fn order_key(code: &NodeCode) -> (u32, &str) {
    (code.level(), code.as_str())
}
