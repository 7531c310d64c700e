//! Deterministic fixtures shared by the benchmarks.

use std::path::Path;

use cloudatelier_core::ingest::SourceFormat;
use cloudatelier_core::{
    build_index, Aabb, BuildConfig, IndexError, IndexManifest, PointRecord, SourceSummary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points uniform in a 100 x 100 x 10 box with random intensity.
pub fn uniform_cloud(n: usize, seed: u64) -> Vec<PointRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut p = PointRecord::new(
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..10.0),
            );
            p.intensity = rng.gen();
            p
        })
        .collect()
}

/// `per_face` points on each face of the unit cube.
pub fn cube_shell(per_face: usize, seed: u64) -> Vec<PointRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(6 * per_face);
    for axis in 0..3 {
        for side in [0.0, 1.0] {
            for _ in 0..per_face {
                let mut p = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                p[axis] = side;
                pts.push(PointRecord::new(p[0], p[1], p[2]));
            }
        }
    }
    pts
}

pub fn summary_of(points: &[PointRecord]) -> SourceSummary {
    let mut aabb = Aabb::empty();
    for p in points {
        aabb.extend(p.position());
    }
    SourceSummary {
        point_count: points.len() as u64,
        aabb,
        has_color: false,
        has_intensity: true,
        source_format: SourceFormat::Xyz,
    }
}

/// Builds an index of `points` under `dir`.
pub fn index(
    points: &[PointRecord],
    dir: &Path,
    cfg: &BuildConfig,
) -> Result<IndexManifest, IndexError> {
    build_index(
        points.iter().copied().map(Ok),
        &summary_of(points),
        dir,
        cfg,
    )
}

/// Query positions near the cloud produced by [`uniform_cloud`].
pub fn queries(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..10.0),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(uniform_cloud(10, 1), uniform_cloud(10, 1));
        assert_ne!(uniform_cloud(10, 1), uniform_cloud(10, 2));
        let shell = cube_shell(5, 3);
        assert_eq!(shell.len(), 30);
        assert!(shell
            .iter()
            .all(|p| p.position().iter().any(|c| *c == 0.0 || *c == 1.0)));
    }

    #[test]
    fn index_round_trips_the_count() {
        let dir = tempfile::tempdir().unwrap();
        let pts = uniform_cloud(2000, 4);
        let m = index(&pts, dir.path(), &BuildConfig::default()).unwrap();
        assert_eq!(m.total_points, 2000);
    }
}
