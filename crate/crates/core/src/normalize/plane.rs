use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::rng;

/// Plane `normal · p + offset = 0` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_threshold: f64,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] + self.offset
    }

    fn through(a: &Point3, b: &Point3, c: &Point3, threshold: f64) -> Option<Self> {
        let a = Vector3::from(*a);
        let n = (Vector3::from(*b) - a).cross(&(Vector3::from(*c) - a));
        let len = n.norm();
        let scale = (Vector3::from(*b) - a).norm().max((Vector3::from(*c) - a).norm());
        if !(len > 1e-12 * scale * scale) {
            return None;
        }
        let n = n / len;
        Some(PlaneModel {
            normal: n.into(),
            offset: -n.dot(&a),
            inlier_threshold: threshold,
        })
    }

    fn flipped(self) -> Self {
        PlaneModel {
            normal: self.normal.map(|c| -c),
            offset: -self.offset,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsacParams {
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for MsacParams {
    fn default() -> Self {
        MsacParams {
            inlier_threshold: 0.5,
            iterations: 1000,
            seed: 0,
        }
    }
}

/// Truncated quadratic cost `Σ min(d², t²)`.
pub fn msac_cost(plane: &PlaneModel, points: &[Point3]) -> f64 {
    let t2 = plane.inlier_threshold * plane.inlier_threshold;
    points
        .iter()
        .map(|p| {
            let d = plane.signed_distance(p);
            (d * d).min(t2)
        })
        .sum()
}

fn check_not_collinear(points: &[Point3]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "plane fitting needs at least 3 points, got {}",
            points.len()
        )));
    }
    let c = crate::cloud::centroid(points).expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-18 * ev[0].max(f64::MIN_POSITIVE)) || ev[0] == 0.0 {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    Ok(())
}

/// M-estimator sample consensus plane fit.
///
/// Draws `iterations` random 3-point hypotheses and keeps the one with the
/// lowest truncated cost (first wins on ties). The normal is then oriented so
/// that more off-plane points lie on its positive side.
pub fn fit_plane_msac(points: &[Point3], params: &MsacParams) -> Result<PlaneModel> {
    if !(params.inlier_threshold > 0.0) {
        return Err(Error::InvalidInput("MSAC inlier threshold must be > 0".into()));
    }
    if params.iterations == 0 {
        return Err(Error::InvalidInput("MSAC needs at least one iteration".into()));
    }
    check_not_collinear(points)?;
    let n = points.len();
    let mut rng = rng::seeded(params.seed);
    let mut best: Option<(f64, PlaneModel)> = None;
    let mut hypotheses = 0;
    let mut draws = 0;
    // degenerate triples are redrawn, up to a bounded number of attempts
    while hypotheses < params.iterations && draws < params.iterations * 20 {
        draws += 1;
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for m in [i.min(j), i.max(j)] {
            if k >= m {
                k += 1;
            }
        }
        let Some(plane) = PlaneModel::through(&points[i], &points[j], &points[k], params.inlier_threshold) else {
            continue;
        };
        hypotheses += 1;
        let cost = msac_cost(&plane, points);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, plane));
        }
    }
    let (_, plane) = best.ok_or_else(|| {
        Error::Numerical("MSAC drew only degenerate samples".into())
    })?;
    Ok(orient_to_majority(plane, points))
}

fn orient_to_majority(plane: PlaneModel, points: &[Point3]) -> PlaneModel {
    let t = plane.inlier_threshold;
    let (mut above, mut below, mut sum) = (0usize, 0usize, 0.0);
    for p in points {
        let d = plane.signed_distance(p);
        sum += d;
        if d > t {
            above += 1;
        } else if d < -t {
            below += 1;
        }
    }
    if below > above || (below == above && sum < 0.0) {
        plane.flipped()
    } else {
        plane
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_z0() -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push([i as f64, j as f64, 0.0]);
            }
        }
        pts
    }

    #[test]
    fn exact_plane_with_outliers() {
        let mut pts = grid_z0();
        pts.extend([[3.0, 4.0, 50.0], [10.0, 2.0, 50.0], [1.0, 15.0, 50.0]]);
        let plane = fit_plane_msac(&pts, &MsacParams::default()).unwrap();
        assert_eq!(plane.normal, [0.0, 0.0, 1.0]);
        assert_eq!(plane.offset, 0.0);
    }

    #[test]
    fn three_points_give_their_plane() {
        let pts = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        let plane = fit_plane_msac(&pts, &MsacParams::default()).unwrap();
        for p in &pts {
            assert!(plane.signed_distance(p).abs() < 1e-15);
        }
        assert!((plane.normal[2].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_input_is_degenerate() {
        let pts: Vec<Point3> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(
            fit_plane_msac(&pts, &MsacParams::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_plane_msac(&pts[..2], &MsacParams::default()).is_err());
    }

    #[test]
    fn normal_points_toward_majority() {
        let mut pts = grid_z0();
        for i in 0..10 {
            pts.push([i as f64, 0.0, -5.0]);
        }
        pts.push([0.0, 0.0, 5.0]);
        let plane = fit_plane_msac(&pts, &MsacParams::default()).unwrap();
        assert_eq!(plane.normal, [0.0, 0.0, -1.0]);
    }
}
