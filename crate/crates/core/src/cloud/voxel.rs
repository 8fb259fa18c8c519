use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{KdTree, Label, Point3, PointCloud};
use crate::error::{Error, Result};

/// Cube edge length of a voxel grid, in cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub edge: f64,
}

impl VoxelGridSpec {
    pub fn new(edge: f64) -> Result<Self> {
        if !(edge > 0.0 && edge.is_finite()) {
            return Err(Error::InvalidInput(format!("voxel edge must be > 0, got {edge}")));
        }
        Ok(VoxelGridSpec { edge })
    }

    pub fn cell(&self, p: &Point3) -> [i64; 3] {
        [
            (p[0] / self.edge).floor() as i64,
            (p[1] / self.edge).floor() as i64,
            (p[2] / self.edge).floor() as i64,
        ]
    }
}

/// Voxel-grid average filter.
///
/// One output point per occupied voxel, at the mean of its members, in order
/// of each voxel's first member. The output point takes the semantic and
/// instance label of the original point closest to that mean (lowest index on
/// ties), the rounded mean color, and the maximum member confidence.
///
/// Returns the filtered cloud and, for every input point, the index of the
/// output point representing it.
pub fn voxel_filter(cloud: &PointCloud, spec: VoxelGridSpec) -> Result<(PointCloud, Vec<usize>)> {
    VoxelGridSpec::new(spec.edge)?;
    let n = cloud.len();
    let mut slot_of: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut mapping = Vec::with_capacity(n);
    for (i, p) in cloud.positions().iter().enumerate() {
        let next = members.len();
        let slot = *slot_of.entry(spec.cell(p)).or_insert(next);
        if slot == next {
            members.push(Vec::new());
        }
        members[slot].push(i);
        mapping.push(slot);
    }

    let positions = cloud.positions();
    let means: Vec<Point3> = members
        .iter()
        .map(|m| {
            let mut s = [0.0; 3];
            for &i in m {
                for k in 0..3 {
                    s[k] += positions[i][k];
                }
            }
            let c = m.len() as f64;
            [s[0] / c, s[1] / c, s[2] / c]
        })
        .collect();

    let tree = KdTree::new(positions);
    let nearest: Vec<usize> = means
        .iter()
        .map(|q| tree.nearest(q).map(|(i, _)| i).unwrap_or(0))
        .collect();

    let colors = cloud.colors().map(|cols| {
        members
            .iter()
            .map(|m| {
                let mut s = [0u64; 3];
                for &i in m {
                    for k in 0..3 {
                        s[k] += cols[i][k] as u64;
                    }
                }
                let c = m.len() as u64;
                [0, 1, 2].map(|k| ((s[k] + c / 2) / c) as u8)
            })
            .collect()
    });
    let confidence = cloud.confidence().map(|conf| {
        members
            .iter()
            .map(|m| m.iter().map(|&i| conf[i]).max().unwrap_or(0))
            .collect()
    });
    let semantic: Vec<Label> = nearest.iter().map(|&i| cloud.semantic()[i]).collect();
    let instance = cloud
        .instance()
        .map(|inst| nearest.iter().map(|&i| inst[i]).collect());

    let out = PointCloud::new(means, colors, confidence, semantic, instance)?;
    Ok((out, mapping))
}
