//! Inputs for block-based per-point networks: confidence filtering, voxel
//! subsampling, XY tiling at several offsets, and fusing the per-block
//! predictions back onto the cloud.

pub mod archive;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cloud::{voxel_filter, Label, Point3, PointCloud, VoxelGridSpec};
use crate::error::{Error, Result};
use crate::rng;

pub use archive::{load_blocks, read_blocks, save_blocks, write_blocks, BlockArchive};

/// Keeps exactly the points with confidence `>= min_conf`.
pub fn confidence_filter(cloud: &PointCloud, min_conf: u32) -> Result<PointCloud> {
    let conf = cloud
        .confidence()
        .ok_or_else(|| Error::InvalidInput("cloud has no confidence attribute".into()))?;
    Ok(cloud.filter(|i| conf[i] >= min_conf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Square edge length, cm.
    pub edge: f64,
    /// Grid offsets applied to both x and y, cm; one partitioning pass each.
    pub offsets: Vec<f64>,
    pub points_per_block: usize,
    /// Voxel edge of the subsampling done before tiling, cm.
    pub voxel_edge: f64,
    /// Blocks with fewer raw points are left out of training sets.
    pub min_training_points: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            edge: 10.0,
            offsets: vec![0.0, 5.0],
            points_per_block: 8192,
            voxel_edge: 0.1,
            min_training_points: 100,
        }
    }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge > 0.0 && self.edge.is_finite()) {
            return Err(Error::Config(format!("block edge must be > 0, got {}", self.edge)));
        }
        if self.points_per_block == 0 {
            return Err(Error::Config("points per block must be positive".into()));
        }
        if self.offsets.is_empty() {
            return Err(Error::Config("at least one block offset is required".into()));
        }
        if let Some(o) = self.offsets.iter().find(|o| !(0.0..self.edge).contains(*o)) {
            return Err(Error::Config(format!("block offset {o} outside [0, {})", self.edge)));
        }
        VoxelGridSpec::new(self.voxel_edge).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Grid cell of `p` in the pass with offset `offset`.
    pub fn cell(&self, p: &Point3, offset: f64) -> [i64; 2] {
        [
            ((p[0] - offset) / self.edge).floor() as i64,
            ((p[1] - offset) / self.edge).floor() as i64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockPurpose {
    /// Sparse blocks are dropped.
    Training,
    /// Every non-empty cell is kept so that all points are covered.
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub cell: [i64; 2],
    pub offset_id: usize,
    /// Indices into the partitioned cloud, ascending.
    pub members: Vec<usize>,
    /// Exactly `points_per_block` indices into the partitioned cloud.
    pub sample: Vec<usize>,
}

impl Block {
    /// XY center of the block's square.
    pub fn center(&self, spec: &BlockSpec) -> [f64; 2] {
        let o = spec.offsets[self.offset_id];
        [
            o + (self.cell[0] as f64 + 0.5) * spec.edge,
            o + (self.cell[1] as f64 + 0.5) * spec.edge,
        ]
    }

    /// Network input coordinates of the sampled points: x and y relative to
    /// the block center, z unchanged.
    pub fn local_coordinates(&self, cloud: &PointCloud, spec: &BlockSpec) -> Vec<Point3> {
        let c = self.center(spec);
        self.sample
            .iter()
            .map(|&i| {
                let p = cloud.positions()[i];
                [p[0] - c[0], p[1] - c[1], p[2]]
            })
            .collect()
    }

    /// Turns predictions for the sampled slots into one label per member.
    /// A member that occupies several slots takes their majority; a member
    /// that was not sampled takes the label of the nearest sampled point.
    /// Ties go to stem.
    pub fn member_labels(&self, cloud: &PointCloud, slot_labels: &[Label]) -> Result<Vec<Label>> {
        if slot_labels.len() != self.sample.len() {
            return Err(Error::InvalidInput(format!(
                "{} predictions for a block of {} points",
                slot_labels.len(),
                self.sample.len()
            )));
        }
        let mut tally = vec![[0usize; 2]; self.members.len()];
        let slot_member: Vec<usize> = self
            .sample
            .iter()
            .map(|i| self.members.binary_search(i).expect("sample drawn from members"))
            .collect();
        for (&m, &l) in slot_member.iter().zip(slot_labels) {
            match l {
                Label::Stem => tally[m][0] += 1,
                Label::Leaf => tally[m][1] += 1,
                Label::Unlabeled => return Err(Error::InvalidInput("block prediction is unlabeled".into())),
            }
        }
        let sampled: Vec<usize> = (0..self.members.len()).filter(|&m| tally[m] != [0, 0]).collect();
        let sampled_pts: Vec<Point3> = sampled.iter().map(|&m| cloud.positions()[self.members[m]]).collect();
        let tree = crate::cloud::KdTree::new(&sampled_pts);
        let vote = |t: [usize; 2]| if t[1] > t[0] { Label::Leaf } else { Label::Stem };
        Ok((0..self.members.len())
            .map(|m| {
                if tally[m] != [0, 0] {
                    return vote(tally[m]);
                }
                let (j, _) = tree
                    .nearest(&cloud.positions()[self.members[m]])
                    .expect("every block has sampled points");
                vote(tally[sampled[j]])
            })
            .collect())
    }
}

/// Tiles the cloud once per offset. Each non-empty cell becomes a block
/// whose sample keeps every member when the cell holds at most N points
/// (padding with seeded draws with replacement) and is a seeded uniform
/// subsample otherwise. Blocks come out ordered by offset, then cell.
pub fn partition_blocks(cloud: &PointCloud, spec: &BlockSpec, seed: u64, purpose: BlockPurpose) -> Result<Vec<Block>> {
    spec.validate()?;
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot partition an empty cloud".into()));
    }
    let n = spec.points_per_block;
    let mut blocks = Vec::new();
    for (offset_id, &offset) in spec.offsets.iter().enumerate() {
        let mut cells: std::collections::BTreeMap<[i64; 2], Vec<usize>> = Default::default();
        for (i, p) in cloud.positions().iter().enumerate() {
            cells.entry(spec.cell(p, offset)).or_default().push(i);
        }
        for (cell, members) in cells {
            if purpose == BlockPurpose::Training && members.len() < spec.min_training_points {
                continue;
            }
            let salt = ((offset_id as u64) << 48) ^ ((cell[0] as u64) << 24) ^ (cell[1] as u64 & 0xFF_FFFF);
            let mut r = rng::derived(seed, salt);
            let sample: Vec<usize> = if members.len() <= n {
                let mut s = members.clone();
                s.extend((members.len()..n).map(|_| members[r.random_range(0..members.len())]));
                s
            } else {
                let mut picked = sample(&mut r, members.len(), n).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|k| members[k]).collect()
            };
            blocks.push(Block {
                cell,
                offset_id,
                members,
                sample,
            });
        }
    }
    Ok(blocks)
}

/// Confidence filter (when the cloud carries confidences), then voxel
/// subsampling at the block spec's voxel edge.
pub fn prepare_cloud(cloud: &PointCloud, spec: &BlockSpec, min_conf: u32) -> Result<PointCloud> {
    let filtered = match cloud.confidence() {
        Some(_) => confidence_filter(cloud, min_conf)?,
        None => cloud.clone(),
    };
    Ok(voxel_filter(&filtered, VoxelGridSpec::new(spec.voxel_edge)?)?.0)
}

/// Majority vote per point over the blocks covering it; ties go to stem.
/// `member_labels[b]` holds one label per member of `blocks[b]`.
pub fn reassemble(point_count: usize, blocks: &[Block], member_labels: &[Vec<Label>]) -> Result<Vec<Label>> {
    if blocks.len() != member_labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} label lists for {} blocks",
            member_labels.len(),
            blocks.len()
        )));
    }
    let mut tally = vec![[0usize; 2]; point_count];
    for (b, labels) in blocks.iter().zip(member_labels) {
        if labels.len() != b.members.len() {
            return Err(Error::InvalidInput("label list does not match block membership".into()));
        }
        for (&i, &l) in b.members.iter().zip(labels) {
            let t = tally
                .get_mut(i)
                .ok_or_else(|| Error::InvalidInput(format!("block member {i} out of range")))?;
            match l {
                Label::Stem => t[0] += 1,
                Label::Leaf => t[1] += 1,
                Label::Unlabeled => return Err(Error::InvalidInput("block prediction is unlabeled".into())),
            }
        }
    }
    if let Some(i) = tally.iter().position(|t| *t == [0, 0]) {
        return Err(Error::InvalidInput(format!("point {i} is not covered by any block")));
    }
    Ok(tally
        .iter()
        .map(|t| if t[1] > t[0] { Label::Leaf } else { Label::Stem })
        .collect())
}
