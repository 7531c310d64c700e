//! Sequential RANSAC plane segmentation of the low-density byproduct cloud,
//! and anchoring of vertices to the detected planes.

mod byproduct;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::measure::Vertex3;
use crate::octree::IndexError;
use crate::point::{Aabb, PointRecord};

pub use self::byproduct::{
    read_byproduct, run_byproduct, write_byproduct, Byproduct, ByproductConfig, BYPRODUCT_BIN,
    BYPRODUCT_JSON, BYPRODUCT_RECORD_SIZE,
};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("too few points: {found}, at least 3 are needed")]
    TooFewPoints { found: usize },
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
    #[error("byproduct corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

impl SegmentError {
    pub fn code(&self) -> &'static str {
        match self {
            SegmentError::TooFewPoints { .. } => "TooFewPoints",
            SegmentError::InvalidConfig(_) => "InvalidConfig",
            SegmentError::Corrupt(_) => "ByproductCorrupt",
            SegmentError::Index(e) => e.code(),
        }
    }
}

impl From<std::io::Error> for SegmentError {
    fn from(e: std::io::Error) -> Self {
        SegmentError::Index(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SegmentConfig {
    pub epsilon: f64,
    pub min_inliers: u32,
    pub max_planes: u32,
    pub iterations_per_plane: u32,
    pub seed: u64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            epsilon: 0.02,
            min_inliers: 500,
            max_planes: 20,
            iterations_per_plane: 500,
            seed: 0,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(SegmentError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.iterations_per_plane == 0 {
            return Err(SegmentError::InvalidConfig(
                "iterations_per_plane must be at least 1".into(),
            ));
        }
        if self.max_planes > u16::MAX as u32 - 1 {
            return Err(SegmentError::InvalidConfig(format!(
                "max_planes must be below {}",
                u16::MAX
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Plane {
    pub id: Uuid,
    pub normal: [f64; 3],
    /// Offset along the normal: the plane is `{p : normal . p = d}`.
    pub d: f64,
    pub inlier_count: u32,
    pub aabb: Aabb,
    pub rms_residual: f64,
}

impl Plane {
    #[inline]
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, p) - self.d
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.signed_distance(p);
        [
            p[0] - s * self.normal[0],
            p[1] - s * self.normal[1],
            p[2] - s * self.normal[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub points: Vec<PointRecord>,
    /// Per point: 0 for unassigned, otherwise the 1-based position of its
    /// plane in `planes`.
    pub labels: Vec<u16>,
    /// Ordered by descending inlier count.
    pub planes: Vec<Plane>,
    pub seed: u64,
}

impl SegmentationResult {
    pub fn plane_of(&self, point: usize) -> Option<&Plane> {
        match self.labels[point] {
            0 => None,
            k => self.planes.get(k as usize - 1),
        }
    }
}

/// Unit normal and offset, before acceptance.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    n: [f64; 3],
    d: f64,
}

impl Candidate {
    fn through(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Option<Candidate> {
        let n = cross(sub(b, a), sub(c, a));
        let len = dot(n, n).sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return None;
        }
        Some(Candidate::oriented([n[0] / len, n[1] / len, n[2] / len], a))
    }

    /// Orients the normal so that `d >= 0`. Planes through the origin get
    /// their largest-magnitude normal component positive.
    fn oriented(n: [f64; 3], on_plane: [f64; 3]) -> Candidate {
        let d = dot(n, on_plane);
        let flip = if d != 0.0 {
            d < 0.0
        } else {
            let k = (0..3).fold(0, |k, i| if n[i].abs() > n[k].abs() { i } else { k });
            n[k] < 0.0
        };
        if flip {
            Candidate {
                n: [-n[0], -n[1], -n[2]],
                d: -d,
            }
        } else {
            Candidate { n, d }
        }
    }

    #[inline]
    fn residual(&self, p: [f64; 3]) -> f64 {
        (dot(self.n, p) - self.d).abs()
    }
}

/// Sequential RANSAC with a least-squares refit of every accepted plane.
pub fn segment_planes(
    points: &[PointRecord],
    cfg: &SegmentConfig,
) -> Result<SegmentationResult, SegmentError> {
    cfg.validate()?;
    if points.len() < 3 {
        return Err(SegmentError::TooFewPoints {
            found: points.len(),
        });
    }
    let pos: Vec<[f64; 3]> = points.iter().map(|p| p.position()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut remaining: Vec<u32> = (0..pos.len() as u32).collect();
    let mut found: Vec<(Plane, Vec<u32>)> = Vec::new();

    while found.len() < cfg.max_planes as usize && remaining.len() >= 3 {
        let triples: Vec<[u32; 3]> = (0..cfg.iterations_per_plane)
            .map(|_| sample_three(&mut rng, &remaining))
            .collect();
        let counts: Vec<(usize, usize)> = triples
            .par_iter()
            .enumerate()
            .map(|(t, tri)| {
                let [a, b, c] = tri.map(|i| pos[i as usize]);
                let count = Candidate::through(a, b, c).map_or(0, |cand| {
                    remaining
                        .iter()
                        .filter(|&&i| cand.residual(pos[i as usize]) <= cfg.epsilon)
                        .count()
                });
                (count, t)
            })
            .collect();
        // highest count, lowest trial index on ties
        let (best_count, best_trial) =
            counts
                .iter()
                .copied()
                .fold((0, usize::MAX), |acc, x| if x.0 > acc.0 { x } else { acc });
        if best_count < cfg.min_inliers as usize || best_count < 3 {
            break;
        }
        let [a, b, c] = triples[best_trial].map(|i| pos[i as usize]);
        let candidate = Candidate::through(a, b, c).expect("counted candidates are valid");
        let candidate_inliers = collect(&remaining, &pos, &candidate, cfg.epsilon);

        let refit = fit_plane(candidate_inliers.iter().map(|&i| pos[i as usize]));
        let refit_inliers = refit.map(|r| collect(&remaining, &pos, &r, cfg.epsilon));
        let (plane, inliers) = match (refit, refit_inliers) {
            (Some(r), Some(inl)) if inl.len() >= cfg.min_inliers as usize && inl.len() >= 3 => {
                (r, inl)
            }
            _ => (candidate, candidate_inliers),
        };

        let mut aabb = Aabb::empty();
        let mut sq = 0.0;
        for &i in &inliers {
            let p = pos[i as usize];
            aabb.extend(p);
            sq += plane.residual(p).powi(2);
        }
        let id = uuid::Builder::from_random_bytes(rng.gen()).into_uuid();
        let info = Plane {
            id,
            normal: plane.n,
            d: plane.d,
            inlier_count: inliers.len() as u32,
            aabb,
            rms_residual: (sq / inliers.len() as f64).sqrt(),
        };
        tracing::debug!(
            plane = found.len(),
            inliers = inliers.len(),
            "plane accepted"
        );
        let taken: std::collections::HashSet<u32> = inliers.iter().copied().collect();
        remaining.retain(|i| !taken.contains(i));
        found.push((info, inliers));
    }

    // stable: planes found earlier stay first among equal counts
    found.sort_by(|a, b| b.0.inlier_count.cmp(&a.0.inlier_count));
    let mut labels = vec![0u16; pos.len()];
    for (k, (_, inliers)) in found.iter().enumerate() {
        for &i in inliers {
            labels[i as usize] = k as u16 + 1;
        }
    }
    Ok(SegmentationResult {
        points: points.to_vec(),
        labels,
        planes: found.into_iter().map(|(p, _)| p).collect(),
        seed: cfg.seed,
    })
}

fn sample_three<R: Rng>(rng: &mut R, from: &[u32]) -> [u32; 3] {
    let n = from.len();
    let a = rng.gen_range(0..n);
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (lo, hi) = (a.min(b), a.max(b));
    let mut c = rng.gen_range(0..n - 2);
    if c >= lo {
        c += 1;
    }
    if c >= hi {
        c += 1;
    }
    [from[a], from[b], from[c]]
}

fn collect(remaining: &[u32], pos: &[[f64; 3]], plane: &Candidate, eps: f64) -> Vec<u32> {
    remaining
        .iter()
        .copied()
        .filter(|&i| plane.residual(pos[i as usize]) <= eps)
        .collect()
}

/// Least-squares plane: through the centroid, normal along the eigenvector
/// of the smallest covariance eigenvalue.
fn fit_plane<I: Iterator<Item = [f64; 3]> + Clone>(points: I) -> Option<Candidate> {
    let mut n = 0usize;
    let mut c = [0.0; 3];
    for p in points.clone() {
        n += 1;
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    if n < 3 {
        return None;
    }
    let c = c.map(|v| v / n as f64);
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let v = Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        cov += v * v.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k);
    let len = v.norm();
    if !(len > 0.0) || !len.is_finite() {
        return None;
    }
    Some(Candidate::oriented([v[0] / len, v[1] / len, v[2] / len], c))
}

/// RMS distance of `points` to the plane `normal . p = d`.
pub fn rms_residual(normal: [f64; 3], d: f64, points: &[[f64; 3]]) -> f64 {
    let sq: f64 = points.iter().map(|p| (dot(normal, *p) - d).powi(2)).sum();
    (sq / points.len() as f64).sqrt()
}

/// Least-squares plane of `points` as (unit normal, offset), oriented so that
/// the offset is non-negative.
pub fn fit_least_squares(points: &[[f64; 3]]) -> Option<([f64; 3], f64)> {
    fit_plane(points.iter().copied()).map(|c| (c.n, c.d))
}

/// Projects `vertex` onto the nearest plane within `max_dist`. Equidistant
/// planes resolve to the lower id.
pub fn anchor_to_plane(
    vertex: &Vertex3,
    planes: &[Plane],
    max_dist: f64,
) -> Option<(Uuid, Vertex3)> {
    if !(max_dist > 0.0) {
        return None;
    }
    let p = vertex.position;
    let best = planes
        .iter()
        .map(|pl| (pl.signed_distance(p).abs(), pl))
        .filter(|(dist, _)| *dist <= max_dist)
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)))?;
    let (dist, plane) = best;
    // a residual at rounding level means the vertex already lies on the plane
    let scale = p.iter().fold(plane.d.abs(), |m, v| m.max(v.abs()));
    if dist <= 4.0 * f64::EPSILON * scale.max(1.0) {
        return Some((plane.id, vertex.clone()));
    }
    let mut out = Vertex3::free(plane.project(p));
    out.extra = vertex.extra.clone();
    Some((plane.id, out))
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(id: u128, n: [f64; 3], d: f64) -> Plane {
        Plane {
            id: Uuid::from_u128(id),
            normal: n,
            d,
            inlier_count: 0,
            aabb: Aabb::empty(),
            rms_residual: 0.0,
        }
    }

    #[test]
    fn orientation_rule() {
        let c = Candidate::oriented([0.0, 0.0, -1.0], [0.0, 0.0, -2.0]);
        assert_eq!((c.n, c.d), ([0.0, 0.0, -1.0], 2.0));
        let c = Candidate::oriented([0.0, -1.0, 0.0], [5.0, 0.0, 3.0]);
        assert_eq!((c.n, c.d), ([0.0, 1.0, 0.0], 0.0));
    }

    #[test]
    fn sampled_triples_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let from: Vec<u32> = (10..14).collect();
        for _ in 0..1000 {
            let [a, b, c] = sample_three(&mut rng, &from);
            assert!(a != b && b != c && a != c);
            assert!([a, b, c].iter().all(|v| from.contains(v)));
        }
    }

    #[test]
    fn anchor_examples() {
        let planes = [plane(1, [0.0, 0.0, 1.0], 0.0)];
        let (id, v) = anchor_to_plane(&Vertex3::free([0.0, 0.0, 0.003]), &planes, 0.01).unwrap();
        assert_eq!(id, Uuid::from_u128(1));
        assert_eq!(v.position, [0.0, 0.0, 0.0]);
        assert!(anchor_to_plane(&Vertex3::free([0.0, 0.0, 5.0]), &planes, 0.01).is_none());
    }

    #[test]
    fn equidistant_planes_pick_lower_id() {
        let planes = [
            plane(9, [0.0, 0.0, 1.0], 1.0),
            plane(3, [0.0, 0.0, 1.0], 0.0),
        ];
        let (id, v) = anchor_to_plane(&Vertex3::free([1.0, 2.0, 0.5]), &planes, 1.0).unwrap();
        assert_eq!(id, Uuid::from_u128(3));
        assert_eq!(v.position, [1.0, 2.0, 0.0]);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![PointRecord::new(0.0, 0.0, 0.0); 2];
        assert!(matches!(
            segment_planes(&pts, &SegmentConfig::default()),
            Err(SegmentError::TooFewPoints { found: 2 })
        ));
    }
}
