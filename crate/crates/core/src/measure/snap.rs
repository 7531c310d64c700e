use crate::octree::{NodeCode, NodeSource};

use super::{MeasureError, Vertex3};

/// Nearest stored point within `radius` of `query`. Ties are broken by node
/// code, then by position inside the node. A miss returns the query as an
/// unsnapped vertex.
pub fn snap(query: [f64; 3], radius: f64, index: &dyn NodeSource) -> Result<Vertex3, MeasureError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(MeasureError::InvalidArgument(format!(
            "snap radius must be positive, got {radius}"
        )));
    }
    let r2 = radius * radius;
    let mut nodes: Vec<&NodeCode> = index
        .manifest()
        .nodes
        .iter()
        .filter(|n| n.count > 0 && n.aabb.distance_squared(query) <= r2)
        .map(|n| &n.code)
        .collect();
    // deepest first so the usual hit is found early; the result does not
    // depend on this order
    nodes.sort_by(|a, b| b.level().cmp(&a.level()).then_with(|| a.cmp(b)));

    let mut best: Option<(f64, &NodeCode, usize, [f64; 3])> = None;
    for code in nodes {
        let pts = index.node_points(code)?;
        for (i, p) in pts.iter().enumerate() {
            let q = p.position();
            let d2 =
                (q[0] - query[0]).powi(2) + (q[1] - query[1]).powi(2) + (q[2] - query[2]).powi(2);
            if d2 > r2 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bd, bc, bi, _)) => (d2, code, i) < (*bd, *bc, *bi),
            };
            if better {
                best = Some((d2, code, i, q));
            }
        }
    }
    Ok(match best {
        Some((_, code, _, q)) => Vertex3::snapped_to(q, code.clone()),
        None => Vertex3::free(query),
    })
}
