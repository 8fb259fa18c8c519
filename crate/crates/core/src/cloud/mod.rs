//! Point-cloud data model and the spatial primitives the rest of the crate
//! builds on: PLY I/O, a k-d tree, voxel-grid averaging, radius-linked
//! connected components and nearest-neighbour label transfer.

mod components;
mod index;
pub mod ply;
mod voxel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use components::{connected_components, nearest_indices, nn_propagate, UnionFind};
pub use index::KdTree;
pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyFile};
pub use voxel::{voxel_filter, VoxelGridSpec};

pub type Point3 = [f64; 3];

/// Semantic class of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Stem,
    Leaf,
    Unlabeled,
}

impl Label {
    /// Integer code stored in the PLY `semantic` property.
    pub fn code(self) -> u8 {
        match self {
            Label::Stem => 0,
            Label::Leaf => 1,
            Label::Unlabeled => 255,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Label::Stem),
            1 => Ok(Label::Leaf),
            255 => Ok(Label::Unlabeled),
            other => Err(Error::PlyBody(format!("unknown semantic code {other}"))),
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

/// Structure-of-arrays point cloud. Optional attributes are either absent or
/// exactly as long as `positions`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3>,
    colors: Option<Vec<[u8; 3]>>,
    confidence: Option<Vec<u32>>,
    semantic: Vec<Label>,
    instance: Option<Vec<u32>>,
}

impl PointCloud {
    /// Cloud with positions only; every point is unlabeled.
    pub fn from_positions(positions: Vec<Point3>) -> Result<Self> {
        let semantic = vec![Label::Unlabeled; positions.len()];
        Self::new(positions, None, None, semantic, None)
    }

    pub fn new(
        positions: Vec<Point3>,
        colors: Option<Vec<[u8; 3]>>,
        confidence: Option<Vec<u32>>,
        semantic: Vec<Label>,
        instance: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = positions.len();
        if let Some(bad) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite position at index {bad}")));
        }
        let check = |name: &str, len: Option<usize>| match len {
            Some(len) if len != n => Err(Error::InvalidInput(format!(
                "attribute {name} has {len} entries, expected {n}"
            ))),
            _ => Ok(()),
        };
        check("colors", colors.as_ref().map(Vec::len))?;
        check("confidence", confidence.as_ref().map(Vec::len))?;
        check("semantic", Some(semantic.len()))?;
        check("instance", instance.as_ref().map(Vec::len))?;
        Ok(PointCloud {
            positions,
            colors,
            confidence,
            semantic,
            instance,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn confidence(&self) -> Option<&[u32]> {
        self.confidence.as_deref()
    }

    pub fn semantic(&self) -> &[Label] {
        &self.semantic
    }

    pub fn instance(&self) -> Option<&[u32]> {
        self.instance.as_deref()
    }

    pub fn set_semantic(&mut self, labels: Vec<Label>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.semantic = labels;
        Ok(())
    }

    /// Replaces positions, keeping every other attribute.
    pub fn with_positions(&self, positions: Vec<Point3>) -> Result<Self> {
        PointCloud::new(
            positions,
            self.colors.clone(),
            self.confidence.clone(),
            self.semantic.clone(),
            self.instance.clone(),
        )
    }

    /// New cloud holding the listed points, in the listed order. Indices may repeat.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| v[i]).collect()
        }
        PointCloud {
            positions: pick(&self.positions, indices),
            colors: self.colors.as_ref().map(|c| pick(c, indices)),
            confidence: self.confidence.as_ref().map(|c| pick(c, indices)),
            semantic: pick(&self.semantic, indices),
            instance: self.instance.as_ref().map(|c| pick(c, indices)),
        }
    }

    /// Points for which `keep` returns true, in original order.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select(&idx)
    }

    pub fn centroid(&self) -> Option<Point3> {
        centroid(&self.positions)
    }
}

pub fn centroid(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = points.len() as f64;
    Some([c[0] / n, c[1] / n, c[2] / n])
}

#[inline]
pub fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_attribute_lengths() {
        let err = PointCloud::new(
            vec![[0.0; 3]; 3],
            Some(vec![[0; 3]; 2]),
            None,
            vec![Label::Leaf; 3],
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_nan_positions() {
        assert!(PointCloud::from_positions(vec![[0.0, f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn select_repeats_attributes() {
        let c = PointCloud::new(
            vec![[0.0; 3], [1.0; 3]],
            None,
            Some(vec![3, 9]),
            vec![Label::Stem, Label::Leaf],
            None,
        )
        .unwrap();
        let s = c.select(&[1, 1, 0]);
        assert_eq!(s.confidence().unwrap(), &[9, 9, 3]);
        assert_eq!(s.semantic(), &[Label::Leaf, Label::Leaf, Label::Stem]);
    }
}
