//! Planar shape measures for 2D clusters: PCA linearity, convex hull area,
//! α-shape area and their ratio (solidity).

use delaunator::{triangulate, Point};

use crate::cloud::KdTree;

/// `λ₁ / (λ₁ + λ₂)` of the 2D covariance; `None` when all points coincide.
pub fn linearity(points: &[[f64; 2]]) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p[0], a.1 + p[1]));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    if !(tr > 0.0) {
        return None;
    }
    let disc = ((sxx - syy) * (sxx - syy) / 4.0 + sxy * sxy).sqrt();
    let l1 = tr / 2.0 + disc;
    Some((l1 / tr).min(1.0))
}

fn cross(o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull vertices in counter-clockwise order (Andrew's monotone chain).
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    // upper chain must not eat into the lower one
    let floor = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= floor && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    s.abs() / 2.0
}

fn circumradius(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    let ab = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let bc = ((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2)).sqrt();
    let ca = ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2)).sqrt();
    let area2 = cross(a, b, c).abs();
    if area2 == 0.0 {
        f64::INFINITY
    } else {
        ab * bc * ca / (2.0 * area2)
    }
}

/// Area covered by Delaunay triangles whose circumradius is at most `alpha`.
pub fn alpha_shape_area(points: &[[f64; 2]], alpha: f64) -> f64 {
    let pts: Vec<Point> = points.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
    let tri = triangulate(&pts);
    tri.triangles
        .chunks_exact(3)
        .map(|t| (points[t[0]], points[t[1]], points[t[2]]))
        .filter(|(a, b, c)| circumradius(a, b, c) <= alpha)
        .map(|(a, b, c)| cross(&a, &b, &c).abs() / 2.0)
        .sum()
}

/// Median distance from each point to its nearest other point.
pub fn median_nn_distance(points: &[[f64; 2]]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let tree = KdTree::new(points);
    let mut d: Vec<f64> = points
        .iter()
        .map(|p| tree.knn(p, 2).get(1).map_or(0.0, |c| c.1.sqrt()))
        .collect();
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// α-shape area over convex hull area, with `α = alpha_factor × median NN distance`.
/// `None` for fewer than 3 points or a zero-area hull.
pub fn solidity(points: &[[f64; 2]], alpha_factor: f64) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let hull_area = polygon_area(&convex_hull(points));
    if !(hull_area > 0.0) {
        return None;
    }
    let alpha = alpha_factor * median_nn_distance(points)?;
    Some((alpha_shape_area(points, alpha) / hull_area).min(1.0))
}
