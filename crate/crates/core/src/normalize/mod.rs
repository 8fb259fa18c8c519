//! Turning a raw reconstruction into a metric, pose-normalized, plant-only cloud:
//! scale from landmarks, robust ground-plane fit, rigid re-framing at the
//! plant base, then keep the largest connected component above the base.

mod landmarks;
mod plane;
mod pose;

use serde::{Deserialize, Serialize};

use crate::cloud::{connected_components, PointCloud};
use crate::error::{Error, Result};

pub use landmarks::{scale_factor, LandmarkPair, LandmarkSet};
pub use plane::{fit_plane_msac, msac_cost, MsacParams, PlaneModel};
pub use pose::{normalize_pose, rotation_to_z, RigidTransform};

/// Multiplies every position by `s`.
pub fn apply_scale(cloud: &PointCloud, s: f64) -> Result<PointCloud> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!("scale factor must be > 0, got {s}")));
    }
    let positions = cloud
        .positions()
        .iter()
        .map(|p| [p[0] * s, p[1] * s, p[2] * s])
        .collect();
    cloud.with_positions(positions)
}

/// Largest radius-linked component among points with `z >= 0`.
/// Equal-sized components resolve to the one containing the lowest index.
pub fn extract_plant(cloud: &PointCloud, link_radius: f64) -> Result<PointCloud> {
    let above = cloud.filter(|i| cloud.positions()[i][2] >= 0.0);
    if above.is_empty() {
        return Err(Error::InvalidInput("no points with z >= 0 after pose normalization".into()));
    }
    let ids = connected_components(above.positions(), link_radius)?;
    let k = ids.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in &ids {
        sizes[c] += 1;
    }
    let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap_or(0);
    Ok(above.filter(|i| ids[i] == largest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeParams {
    pub msac: MsacParams,
    pub link_radius: f64,
}

impl Default for NormalizeParams {
    fn default() -> Self {
        NormalizeParams {
            msac: MsacParams::default(),
            link_radius: 0.5,
        }
    }
}

/// What the normalization chain estimated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizeOutcome {
    pub scale: f64,
    /// Plane in scaled coordinates.
    pub plane: PlaneModel,
    pub transform: RigidTransform,
    pub kept_points: usize,
}

/// scale → plane fit → pose → plant extraction.
pub fn normalize_scene(
    raw: &PointCloud,
    landmarks: &LandmarkSet,
    params: &NormalizeParams,
) -> Result<(PointCloud, NormalizeOutcome)> {
    let base = landmarks
        .base
        .ok_or_else(|| Error::InvalidInput("landmark set has no plant base point".into()))?;
    let scale = scale_factor(landmarks)?;
    let scaled = apply_scale(raw, scale)?;
    let plane = fit_plane_msac(scaled.positions(), &params.msac)?;
    let base = base.map(|c| c * scale);
    let (posed, transform) = normalize_pose(&scaled, &plane, base)?;
    let plant = extract_plant(&posed, params.link_radius)?;
    let kept_points = plant.len();
    Ok((
        plant,
        NormalizeOutcome {
            scale,
            plane,
            transform,
            kept_points,
        },
    ))
}
