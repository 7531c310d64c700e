use serde::Serialize;

use crate::octree::{NodeCode, NodeSource};
use crate::point::{Aabb, PointRecord};

use super::{MeasureError, Vertex3};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSample {
    /// Curvilinear distance along the XY projection of the polyline.
    pub mileage: f64,
    pub elevation: f64,
    /// Signed horizontal offset; positive to the left of the direction of
    /// travel.
    pub lateral: f64,
    pub point: PointRecord,
    pub node: NodeCode,
    pub index: usize,
}

struct Segment {
    a: [f64; 2],
    d: [f64; 2],
    len2: f64,
    start: f64,
}

/// Every indexed point down to `depth_limit` lying within `width / 2` of the
/// polyline, measured horizontally, sorted by mileage.
pub fn extract_profile(
    polyline: &[Vertex3],
    width: f64,
    index: &dyn NodeSource,
    depth_limit: u32,
) -> Result<Vec<ProfileSample>, MeasureError> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(MeasureError::InvalidArgument(format!(
            "profile width must be positive, got {width}"
        )));
    }
    if polyline.len() < 2 {
        return Err(MeasureError::InvalidArgument(
            "profile polyline needs at least 2 vertices".into(),
        ));
    }
    let mut segments = Vec::new();
    let mut start = 0.0;
    for w in polyline.windows(2) {
        let a = [w[0].position[0], w[0].position[1]];
        let d = [w[1].position[0] - a[0], w[1].position[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        if len2 > 0.0 {
            segments.push(Segment { a, d, len2, start });
            start += len2.sqrt();
        }
    }
    if segments.is_empty() {
        return Err(MeasureError::DegenerateGeometry(
            "profile polyline has zero horizontal length".into(),
        ));
    }
    let half = width / 2.0;
    let half2 = half * half;

    let mut corridor = Aabb::empty();
    for v in polyline {
        corridor.extend([v.position[0], v.position[1], 0.0]);
    }
    let (lo, hi) = (
        [corridor.min[0] - half, corridor.min[1] - half],
        [corridor.max[0] + half, corridor.max[1] + half],
    );

    let mut out = Vec::new();
    for node in &index.manifest().nodes {
        if node.level() > depth_limit || node.count == 0 {
            continue;
        }
        let b = &node.aabb;
        if b.max[0] < lo[0] || b.min[0] > hi[0] || b.max[1] < lo[1] || b.min[1] > hi[1] {
            continue;
        }
        let pts = index.node_points(&node.code)?;
        for (i, p) in pts.iter().enumerate() {
            if let Some((mileage, lateral)) = locate(&segments, [p.x, p.y], half2) {
                out.push(ProfileSample {
                    mileage,
                    elevation: p.z,
                    lateral,
                    point: *p,
                    node: node.code.clone(),
                    index: i,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.mileage
            .total_cmp(&b.mileage)
            .then_with(|| a.node.cmp(&b.node))
            .then(a.index.cmp(&b.index))
    });
    Ok(out)
}

/// Mileage and signed lateral offset of `p` against the nearest segment, if
/// within the corridor. The first segment wins ties.
fn locate(segments: &[Segment], p: [f64; 2], half2: f64) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for s in segments {
        let (rx, ry) = (p[0] - s.a[0], p[1] - s.a[1]);
        let t = ((rx * s.d[0] + ry * s.d[1]) / s.len2).clamp(0.0, 1.0);
        let (ex, ey) = (rx - t * s.d[0], ry - t * s.d[1]);
        let dist2 = ex * ex + ey * ey;
        if dist2 <= half2 && best.is_none_or(|b| dist2 < b.0) {
            let side = s.d[0] * ry - s.d[1] * rx;
            let lateral = if side < 0.0 {
                -dist2.sqrt()
            } else {
                dist2.sqrt()
            };
            best = Some((dist2, s.start + t * s.len2.sqrt(), lateral));
        }
    }
    best.map(|(_, m, l)| (m, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{IndexManifest, MemoryIndex, OctreeNode};
    use std::collections::HashMap;

    fn one_node(points: Vec<PointRecord>) -> MemoryIndex {
        let aabb = Aabb::new([-100.0; 3], [100.0; 3]);
        let manifest = IndexManifest {
            version: "1".into(),
            aabb,
            root_spacing: 1.0,
            total_points: points.len() as u64,
            attributes: crate::octree::tile_attributes(),
            entwine_mode: false,
            nodes: vec![OctreeNode {
                code: NodeCode::root(),
                count: points.len() as u32,
                aabb,
                overflow: false,
            }],
        };
        MemoryIndex::new(manifest, HashMap::from([(NodeCode::root(), points)]))
    }

    fn line() -> Vec<Vertex3> {
        vec![Vertex3::free([0.0; 3]), Vertex3::free([10.0, 0.0, 0.0])]
    }

    #[test]
    fn inside_and_outside_the_corridor() {
        let idx = one_node(vec![
            PointRecord::new(5.0, 0.5, 7.0),
            PointRecord::new(5.0, 2.0, 7.0),
            PointRecord::new(3.0, -0.25, 1.0),
        ]);
        let s = extract_profile(&line(), 2.0, &idx, 16).unwrap();
        let got: Vec<_> = s
            .iter()
            .map(|s| (s.mileage, s.elevation, s.lateral))
            .collect();
        assert_eq!(got, vec![(3.0, 1.0, -0.25), (5.0, 7.0, 0.5)]);
    }

    #[test]
    fn zero_horizontal_length_is_degenerate() {
        let idx = one_node(vec![]);
        let vertical = vec![
            Vertex3::free([1.0, 1.0, 0.0]),
            Vertex3::free([1.0, 1.0, 5.0]),
        ];
        assert!(matches!(
            extract_profile(&vertical, 1.0, &idx, 16),
            Err(MeasureError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn mileage_continues_across_vertices() {
        let idx = one_node(vec![PointRecord::new(10.0, 4.0, 0.0)]);
        let bend = vec![
            Vertex3::free([0.0; 3]),
            Vertex3::free([10.0, 0.0, 0.0]),
            Vertex3::free([10.0, 10.0, 0.0]),
        ];
        let s = extract_profile(&bend, 1.0, &idx, 16).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mileage, 14.0);
        assert_eq!(s[0].lateral, 0.0);
    }
}
