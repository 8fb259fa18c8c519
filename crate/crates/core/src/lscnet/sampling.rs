//! Center selection and ball grouping for set abstraction, plus the input
//! preparation applied to every superpoint before it enters the network.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::cloud::{dist2, KdTree, Point3};
use crate::error::{Error, Result};
use crate::rng;

/// Farthest point sampling: greedy max-min from `start`, ties to the lowest index.
pub fn fps(points: &[Point3], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::InvalidInput(format!("cannot pick {m} centers from {n} points")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::InvalidInput(format!("start index {start} out of range")));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..m {
        selected.push(current);
        min_d[current] = f64::NEG_INFINITY;
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        current = best.1;
    }
    Ok(selected)
}

/// Ball query backed by a k-d tree over a fixed point set.
pub struct BallIndex<'a> {
    points: &'a [Point3],
    tree: KdTree<3>,
}

impl<'a> BallIndex<'a> {
    pub fn new(points: &'a [Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("ball grouping needs a non-empty cloud".into()));
        }
        Ok(BallIndex {
            points,
            tree: KdTree::new(points),
        })
    }

    /// `k` member indices for the ball around `center`: a seeded sample without
    /// replacement when enough points are inside, otherwise every in-ball point
    /// padded with the in-ball point nearest the center, or the globally
    /// nearest point repeated when the ball is empty.
    pub fn group(&self, center: &Point3, radius: f64, k: usize, seed: u64) -> Vec<usize> {
        let inside = self.tree.within(center, radius);
        if inside.is_empty() {
            let (nearest, _) = self.tree.nearest(center).expect("non-empty tree");
            return vec![nearest; k];
        }
        if inside.len() >= k {
            let mut rng = rng::seeded(seed);
            let mut picked: Vec<usize> = sample(&mut rng, inside.len(), k).into_iter().map(|i| inside[i]).collect();
            picked.sort_unstable();
            return picked;
        }
        let pad = *inside
            .iter()
            .min_by(|&&a, &&b| dist2(&self.points[a], center).total_cmp(&dist2(&self.points[b], center)).then(a.cmp(&b)))
            .expect("non-empty");
        let mut out = inside.clone();
        out.resize(k, pad);
        out
    }
}

/// A grouped region: member indices, centered coordinates and member features.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedRegion {
    pub indices: Vec<usize>,
    pub relative: Vec<Point3>,
    pub features: Vec<Vec<f64>>,
}

/// One-shot ball grouping; `features` may be empty (coordinates only).
pub fn ball_group(
    points: &[Point3],
    features: &[Vec<f64>],
    center: &Point3,
    radius: f64,
    k: usize,
    seed: u64,
) -> Result<GroupedRegion> {
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("ball radius must be > 0, got {radius}")));
    }
    if !features.is_empty() && features.len() != points.len() {
        return Err(Error::InvalidInput("features and points differ in length".into()));
    }
    let indices = BallIndex::new(points)?.group(center, radius, k, seed);
    let relative = indices
        .iter()
        .map(|&i| {
            let p = points[i];
            [p[0] - center[0], p[1] - center[1], p[2] - center[2]]
        })
        .collect();
    let features = if features.is_empty() {
        Vec::new()
    } else {
        indices.iter().map(|&i| features[i].clone()).collect()
    };
    Ok(GroupedRegion {
        indices,
        relative,
        features,
    })
}

/// Lexicographic order of the coordinates; makes everything downstream
/// independent of the order points arrive in.
pub fn canonical_order(points: &[Point3]) -> Vec<Point3> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    v
}

/// Seeded resample to exactly `n` points: with replacement when short,
/// without replacement when long, unchanged when equal.
pub fn resample(points: &[Point3], n: usize, seed: u64) -> Result<Vec<Point3>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty point set".into()));
    }
    let mut rng = rng::derived(seed, 0x7e5a);
    Ok(match points.len().cmp(&n) {
        std::cmp::Ordering::Equal => points.to_vec(),
        std::cmp::Ordering::Greater => {
            let mut idx = sample(&mut rng, points.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| points[i]).collect()
        }
        std::cmp::Ordering::Less => {
            // keep every point once, fill the rest by drawing with replacement
            let mut out = points.to_vec();
            out.extend((points.len()..n).map(|_| points[rng.random_range(0..points.len())]));
            out
        }
    })
}

/// Translate to the centroid and scale into the unit sphere. A set of
/// coincident points maps to the origin.
pub fn normalize_unit_sphere(points: &[Point3]) -> Vec<Point3> {
    let Some(c) = crate::cloud::centroid(points) else {
        return Vec::new();
    };
    let r = points.iter().map(|p| dist2(p, &c)).fold(0.0, f64::max).sqrt();
    let s = if r > 0.0 { 1.0 / r } else { 1.0 };
    points
        .iter()
        .map(|p| [(p[0] - c[0]) * s, (p[1] - c[1]) * s, (p[2] - c[2]) * s])
        .collect()
}

/// Canonical order, seeded resample to `n`, unit-sphere normalization.
pub fn prepare_input(points: &[Point3], n: usize, seed: u64) -> Result<Vec<Point3>> {
    let sorted = canonical_order(points);
    Ok(normalize_unit_sphere(&resample(&sorted, n, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_on_a_line() {
        let pts: Vec<Point3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(fps(&pts, 3, 0).unwrap(), vec![0, 9, 4]);
        assert_eq!(fps(&pts, 1, 6).unwrap(), vec![6]);
        let mut all = fps(&pts, 10, 0).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(fps(&pts, 11, 0).is_err());
    }

    #[test]
    fn grouping_rules() {
        let pts = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [5.0, 5.0, 5.0]];
        let g = ball_group(&pts, &[], &[0.0, 0.0, 0.0], 0.5, 3, 1).unwrap();
        assert_eq!(g.indices, vec![0, 1, 2]);
        assert_eq!(g.relative[1], [0.1, 0.0, 0.0]);
        let g = ball_group(&pts, &[], &[5.0, 5.0, 5.1], 0.5, 4, 1).unwrap();
        assert_eq!(g.indices, vec![3; 4]);
        // padding repeats the in-ball point nearest the center
        let g = ball_group(&pts, &[], &[0.09, 0.0, 0.0], 0.15, 4, 1).unwrap();
        assert_eq!(g.indices, vec![0, 1, 2, 1]);
        // empty ball falls back to the global nearest
        let g = ball_group(&pts, &[], &[3.0, 3.0, 3.0], 0.1, 2, 1).unwrap();
        assert_eq!(g.indices, vec![3, 3]);
        assert!(ball_group(&[], &[], &[0.0; 3], 1.0, 2, 0).is_err());
    }

    #[test]
    fn resample_sizes_and_normalization() {
        let pts: Vec<Point3> = (0..7).map(|i| [i as f64, 2.0 * i as f64, 1.0]).collect();
        assert_eq!(resample(&pts, 20, 1).unwrap().len(), 20);
        assert_eq!(resample(&pts, 3, 1).unwrap().len(), 3);
        let n = normalize_unit_sphere(&pts);
        let r = n.iter().map(|p| dist2(p, &[0.0; 3])).fold(0.0, f64::max).sqrt();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(normalize_unit_sphere(&[[2.0, 2.0, 2.0]; 3]), vec![[0.0; 3]; 3]);
    }
}
