use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::point::Aabb;

/// Path address of an octree node: `"r"` followed by one octant digit per
/// level. Octant bits: 4 = x high, 2 = y high, 1 = z high.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeCode(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid node code {0:?}")]
pub struct InvalidNodeCode(pub String);

impl NodeCode {
    pub fn root() -> Self {
        NodeCode("r".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn level(&self) -> u32 {
        (self.0.len() - 1) as u32
    }

    pub fn is_root(&self) -> bool {
        self.0.len() == 1
    }

    pub fn child(&self, octant: u8) -> NodeCode {
        debug_assert!(octant < 8);
        let mut s = String::with_capacity(self.0.len() + 1);
        s.push_str(&self.0);
        s.push((b'0' + octant) as char);
        NodeCode(s)
    }

    pub fn parent(&self) -> Option<NodeCode> {
        if self.is_root() {
            None
        } else {
            Some(NodeCode(self.0[..self.0.len() - 1].to_string()))
        }
    }

    /// Octant digits from the root downwards.
    pub fn octants(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.bytes().skip(1).map(|b| b - b'0')
    }

    /// True when `self` is `other` or one of its ancestors.
    pub fn is_ancestor_of(&self, other: &NodeCode) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Bounds of this node inside the cubic root box.
    pub fn bounds(&self, root: &Aabb) -> Aabb {
        let mut b = *root;
        for o in self.octants() {
            b = child_bounds(&b, o);
        }
        b
    }
}

/// Split plane of a node; a coordinate equal to the midpoint goes high.
#[inline]
pub fn midpoint(b: &Aabb) -> [f64; 3] {
    [
        0.5 * (b.min[0] + b.max[0]),
        0.5 * (b.min[1] + b.max[1]),
        0.5 * (b.min[2] + b.max[2]),
    ]
}

#[inline]
pub fn octant_of(b: &Aabb, p: [f64; 3]) -> u8 {
    let m = midpoint(b);
    ((p[0] >= m[0]) as u8) << 2 | ((p[1] >= m[1]) as u8) << 1 | (p[2] >= m[2]) as u8
}

#[inline]
pub fn child_bounds(b: &Aabb, octant: u8) -> Aabb {
    let m = midpoint(b);
    let mut out = *b;
    for (axis, bit) in [(0usize, 4u8), (1, 2), (2, 1)] {
        if octant & bit != 0 {
            out.min[axis] = m[axis];
        } else {
            out.max[axis] = m[axis];
        }
    }
    out
}

impl fmt::Display for NodeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for NodeCode {
    type Err = InvalidNodeCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.starts_with('r') && s.bytes().skip(1).all(|b| (b'0'..=b'7').contains(&b));
        if ok {
            Ok(NodeCode(s.to_string()))
        } else {
            Err(InvalidNodeCode(s.to_string()))
        }
    }
}

impl Serialize for NodeCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NodeCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
