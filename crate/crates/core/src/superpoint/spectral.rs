//! Two-way spectral split of a 2D point set.
//!
//! Builds a symmetric k-NN graph with Gaussian weights (σ = median edge
//! length), and splits by the sign of the Fiedler vector of the normalized
//! Laplacian `I − D^{-1/2} W D^{-1/2}`. The Fiedler vector is found by power
//! iteration on `(I + D^{-1/2} W D^{-1/2}) / 2` with the trivial eigenvector
//! `D^{1/2}·1` projected out.

use rand_distr::{Distribution, StandardNormal};

use crate::cloud::KdTree;
use crate::rng;

/// Sparse symmetric affinity graph in adjacency-list form.
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl AffinityGraph {
    pub fn knn_gaussian(points: &[[f64; 2]], k: usize) -> Self {
        let n = points.len();
        let tree = KdTree::new(points);
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            for (j, d2) in tree.knn(p, k + 1) {
                if j != i {
                    edges.push((i.min(j), i.max(j), d2.sqrt()));
                }
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let mut lengths: Vec<f64> = edges.iter().map(|e| e.2).collect();
        let sigma = if lengths.is_empty() {
            1.0
        } else {
            let mid = lengths.len() / 2;
            let (_, m, _) = lengths.select_nth_unstable_by(mid, f64::total_cmp);
            if *m > 0.0 {
                *m
            } else {
                1.0
            }
        };
        let mut neighbors = vec![Vec::new(); n];
        for (i, j, d) in edges {
            let w = (-(d * d) / (2.0 * sigma * sigma)).exp();
            neighbors[i].push((j, w));
            neighbors[j].push((i, w));
        }
        AffinityGraph { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.neighbors
            .iter()
            .map(|row| row.iter().map(|e| e.1).sum())
            .collect()
    }

    /// Dense normalized affinity `D^{-1/2} W D^{-1/2}`, for small graphs and checks.
    pub fn normalized_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let inv_sqrt: Vec<f64> = self.degrees().iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in self.neighbors.iter().enumerate() {
            for &(j, w) in row {
                m[i][j] = inv_sqrt[i] * w * inv_sqrt[j];
            }
        }
        m
    }
}

/// Approximate Fiedler vector (in the symmetric-normalized basis), or `None`
/// when the graph has fewer than two nodes or no edges.
pub fn fiedler_vector(graph: &AffinityGraph, max_iter: usize, tol: f64, seed: u64) -> Option<Vec<f64>> {
    let n = graph.len();
    if n < 2 {
        return None;
    }
    let deg = graph.degrees();
    if deg.iter().any(|&d| !(d > 0.0)) {
        return None;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let trivial_norm = deg.iter().sum::<f64>().sqrt();
    let trivial: Vec<f64> = deg.iter().map(|d| d.sqrt() / trivial_norm).collect();

    let project = |v: &mut [f64]| {
        let dot: f64 = v.iter().zip(&trivial).map(|(a, b)| a * b).sum();
        for (x, t) in v.iter_mut().zip(&trivial) {
            *x -= dot * t;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        norm
    };

    let mut rng = rng::derived(seed, 0xf1ed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    if project(&mut v) == 0.0 {
        return None;
    }
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        for i in 0..n {
            let mut s = 0.0;
            for &(j, w) in &graph.neighbors[i] {
                s += w * inv_sqrt[j] * v[j];
            }
            next[i] = 0.5 * (v[i] + inv_sqrt[i] * s);
        }
        if project(&mut next) == 0.0 {
            return None;
        }
        let delta = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut v, &mut next);
        if delta < tol {
            break;
        }
    }
    Some(v)
}

/// Side assignment (`true` = non-negative Fiedler entry) of a spectral bisection.
pub fn spectral_bisect(points: &[[f64; 2]], k: usize, seed: u64) -> Option<Vec<bool>> {
    let graph = AffinityGraph::knn_gaussian(points, k);
    let v = fiedler_vector(&graph, 3000, 1e-9, seed)?;
    Some(v.iter().map(|&x| x >= 0.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn two_blobs() -> Vec<[f64; 2]> {
        let mut pts = Vec::new();
        for i in 0..30 {
            let t = i as f64 * 0.7;
            pts.push([t.cos() * (1.0 + (i % 3) as f64 * 0.3), t.sin()]);
            pts.push([6.0 + t.cos(), 0.2 + t.sin() * (1.0 + (i % 4) as f64 * 0.2)]);
        }
        pts
    }

    #[test]
    fn power_iteration_matches_dense_eigensolver() {
        let pts = two_blobs();
        // a bridge so the graph is connected
        let mut pts = pts;
        for i in 1..10 {
            pts.push([i as f64 * 0.6, 0.0]);
        }
        let g = AffinityGraph::knn_gaussian(&pts, 6);
        let m = g.normalized_dense();
        let n = m.len();
        let dense = DMatrix::from_fn(n, n, |i, j| m[i][j]);
        let eig = SymmetricEigen::new(dense);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let reference = eig.eigenvectors.column(order[1]).into_owned();
        let v = fiedler_vector(&g, 20000, 1e-13, 1).unwrap();
        let dot: f64 = v.iter().zip(reference.iter()).map(|(a, b)| a * b).sum();
        assert!(dot.abs() > 1.0 - 1e-6, "alignment {dot}");
    }

    #[test]
    fn separates_two_blobs() {
        let pts = two_blobs();
        let side = spectral_bisect(&pts, 8, 0).unwrap();
        let left: Vec<bool> = pts.iter().zip(&side).filter(|(p, _)| p[0] < 3.0).map(|(_, &s)| s).collect();
        let right: Vec<bool> = pts.iter().zip(&side).filter(|(p, _)| p[0] >= 3.0).map(|(_, &s)| s).collect();
        assert!(left.iter().all(|&s| s == left[0]));
        assert!(right.iter().all(|&s| s == right[0]));
        assert_ne!(left[0], right[0]);
    }

    #[test]
    fn tiny_inputs() {
        assert!(spectral_bisect(&[[0.0, 0.0]], 10, 0).is_none());
    }
}
