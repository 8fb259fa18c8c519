use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PlaneModel;
use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

/// `p ↦ R (p − origin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub origin: Point3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            origin: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let d = Vector3::new(p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]);
        (self.rotation * d).into()
    }

    pub fn apply_to_direction(&self, v: &[f64; 3]) -> [f64; 3] {
        (self.rotation * Vector3::from(*v)).into()
    }
}

/// Minimal rotation taking unit `n` onto +z: rotation about `n × ẑ` by
/// `arccos(n·ẑ)`; for `n = −ẑ` exactly, a half turn about x.
pub fn rotation_to_z(n: &[f64; 3]) -> Result<Matrix3<f64>> {
    let n = Vector3::from(*n);
    let len = n.norm();
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::InvalidInput("plane normal must be non-zero and finite".into()));
    }
    let n = n / len;
    let (nx, ny, nz) = (n.x, n.y, n.z);
    let s2 = nx * nx + ny * ny;
    if s2 == 0.0 {
        return Ok(if nz > 0.0 {
            Matrix3::identity()
        } else {
            Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
        });
    }
    // v = n × ẑ = (ny, −nx, 0); R = I + [v]× + [v]×² / (1 + c) with c = nz.
    // 1 + nz loses precision near the south pole, where (1 − nz²)/(1 − nz) does not.
    let one_plus_c = if nz >= 0.0 { 1.0 + nz } else { s2 / (1.0 - nz) };
    let v = Vector3::new(ny, -nx, 0.0);
    let vx = v.cross_matrix();
    Ok(Matrix3::identity() + vx + vx * vx / one_plus_c)
}

/// Moves `base` to the origin and rotates the plane normal onto +z.
pub fn normalize_pose(cloud: &PointCloud, plane: &PlaneModel, base: Point3) -> Result<(PointCloud, RigidTransform)> {
    let transform = RigidTransform {
        rotation: rotation_to_z(&plane.normal)?,
        origin: base,
    };
    let positions = cloud.positions().iter().map(|p| transform.apply(p)).collect();
    Ok((cloud.with_positions(positions)?, transform))
}
