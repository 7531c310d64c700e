use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::point::PointRecord;

/// Uniform reservoir sample of `min(target_count, n)` points.
///
/// The result keeps input order, which is also the order in which the
/// surviving points were accepted into the reservoir.
pub fn decimate<I, E>(points: I, target_count: u64, seed: u64) -> Result<Vec<PointRecord>, E>
where
    I: IntoIterator<Item = Result<PointRecord, E>>,
{
    assert!(target_count >= 1, "target_count must be at least 1");
    let target = target_count as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<(u64, PointRecord)> = Vec::with_capacity(target.min(1 << 20));
    for (i, p) in points.into_iter().enumerate() {
        let p = p?;
        let i = i as u64;
        if reservoir.len() < target {
            reservoir.push((i, p));
        } else {
            let j = rng.gen_range(0..=i);
            if (j as usize) < target {
                reservoir[j as usize] = (i, p);
            }
        }
    }
    reservoir.sort_unstable_by_key(|(i, _)| *i);
    Ok(reservoir.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn ok(pts: Vec<PointRecord>) -> impl Iterator<Item = Result<PointRecord, Infallible>> {
        pts.into_iter().map(Ok)
    }

    #[test]
    fn fewer_points_than_target() {
        let pts: Vec<_> = (0..5)
            .map(|i| PointRecord::new(i as f64, 0.0, 0.0))
            .collect();
        assert_eq!(decimate(ok(pts.clone()), 10, 1).unwrap(), pts);
    }

    #[test]
    fn single_point() {
        let p = PointRecord::new(1.0, 2.0, 3.0);
        assert_eq!(decimate(ok(vec![p]), 1, 7).unwrap(), vec![p]);
    }

    #[test]
    fn coverage_over_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pts: Vec<_> = (0..10_000)
            .map(|_| PointRecord::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        for seed in 0..20 {
            let s = decimate(ok(pts.clone()), 100, seed).unwrap();
            assert_eq!(s.len(), 100);
            for axis in 0..3 {
                let lo = s
                    .iter()
                    .map(|p| p.position()[axis])
                    .fold(f64::MAX, f64::min);
                let hi = s
                    .iter()
                    .map(|p| p.position()[axis])
                    .fold(f64::MIN, f64::max);
                assert!(hi - lo >= 0.9, "seed {seed} axis {axis}: {lo}..{hi}");
            }
            assert_eq!(s, decimate(ok(pts.clone()), 100, seed).unwrap());
        }
    }
}
