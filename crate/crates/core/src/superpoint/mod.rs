//! Superpoint oversegmentation.
//!
//! The cloud is voxel-averaged, embedded in 2D with t-SNE, and partitioned
//! in the embedding: single-linkage clusters first, then every cluster that
//! is neither line-like nor convex enough is cut recursively by spectral
//! bisection. Ids are carried back to 3D and to full resolution by nearest
//! neighbour.

pub mod shape;
pub mod spectral;
pub mod tsne;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::cloud::{connected_components, voxel_filter, PointCloud, VoxelGridSpec};
use crate::cloud::nearest_indices;
use crate::error::{Error, Result};
use crate::rng;

pub use shape::{linearity, solidity};
pub use tsne::{tsne_embed, Embedding2D, TsneConfig, TsneRun};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperpointConfig {
    pub voxel_edge: f64,
    pub tsne: TsneConfig,
    /// Link distance for single-linkage clustering in the embedding.
    pub cluster_threshold: f64,
    pub linear_threshold: f64,
    pub solidity_threshold: f64,
    pub max_depth: usize,
    /// α-shape radius as a multiple of the median nearest-neighbour distance.
    pub alpha_factor: f64,
    pub spectral_k: usize,
    /// Downsampled clouds larger than this are subsampled before embedding.
    pub max_embed_points: usize,
}

impl Default for SuperpointConfig {
    fn default() -> Self {
        SuperpointConfig {
            voxel_edge: 0.12,
            tsne: TsneConfig::default(),
            cluster_threshold: 1.0,
            linear_threshold: 0.95,
            solidity_threshold: 0.8,
            max_depth: 6,
            alpha_factor: 2.0,
            spectral_k: 10,
            max_embed_points: 4000,
        }
    }
}

impl SuperpointConfig {
    pub fn validate(&self) -> Result<()> {
        self.tsne.validate()?;
        VoxelGridSpec::new(self.voxel_edge).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.cluster_threshold > 0.0) {
            return Err(Error::Config("cluster threshold must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.linear_threshold) || !(0.0..=1.0).contains(&self.solidity_threshold) {
            return Err(Error::Config("linearity and solidity thresholds must lie in [0, 1]".into()));
        }
        if !(self.alpha_factor > 0.0) || self.spectral_k == 0 {
            return Err(Error::Config("alpha factor and spectral k must be positive".into()));
        }
        if (self.max_embed_points as f64) < 3.0 * self.tsne.perplexity {
            return Err(Error::Config("max embed points must allow the configured perplexity".into()));
        }
        Ok(())
    }
}

/// Superpoint id per point plus member lists; every superpoint is non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SuperpointPartition {
    pub ids: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl SuperpointPartition {
    /// Renumbers arbitrary labels densely in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let ids = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let id = *remap.entry(*l).or_insert_with(|| {
                    members.push(Vec::new());
                    members.len() - 1
                });
                members[id].push(i);
                id
            })
            .collect();
        SuperpointPartition { ids, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Checks the partition property: ids and member lists agree, cover every point once, no empty parts.
    pub fn is_valid_partition(&self) -> bool {
        let mut seen = vec![false; self.ids.len()];
        for (s, m) in self.members.iter().enumerate() {
            if m.is_empty() {
                return false;
            }
            for &i in m {
                if i >= seen.len() || seen[i] || self.ids[i] != s {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.iter().all(|&b| b)
    }
}

/// Single-linkage clusters in the embedding.
pub fn euclidean_cluster_2d(embedding: &Embedding2D, threshold: f64) -> Result<Vec<usize>> {
    connected_components(&embedding.coords, threshold)
}

/// Whole-cluster PCA linearity test; coincident points are never linear.
pub fn detect_linear(points: &[[f64; 2]], threshold: f64) -> bool {
    linearity(points).is_some_and(|l| l >= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    TooSmall,
    Linear,
    Solid,
    DepthLimit,
    /// Zero-area hull or a spectral cut with an empty side.
    Unsplittable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPiece {
    /// Indices into the point slice given to [`convexify`].
    pub members: Vec<usize>,
    pub solidity: Option<f64>,
    pub depth: usize,
    pub reason: StopReason,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvexifyParams {
    pub solidity_threshold: f64,
    pub max_depth: usize,
    pub alpha_factor: f64,
    pub spectral_k: usize,
    pub seed: u64,
}

impl From<&SuperpointConfig> for ConvexifyParams {
    fn from(c: &SuperpointConfig) -> Self {
        ConvexifyParams {
            solidity_threshold: c.solidity_threshold,
            max_depth: c.max_depth,
            alpha_factor: c.alpha_factor,
            spectral_k: c.spectral_k,
            seed: c.tsne.seed,
        }
    }
}

/// Recursively bisects `members` (indices into `points`) until each piece is
/// solid enough, too small, or the depth limit is reached.
pub fn convexify(points: &[[f64; 2]], members: &[usize], params: &ConvexifyParams) -> Vec<ConvexPiece> {
    let mut out = Vec::new();
    convexify_rec(points, members.to_vec(), 0, params, &mut out);
    out
}

fn convexify_rec(points: &[[f64; 2]], members: Vec<usize>, depth: usize, params: &ConvexifyParams, out: &mut Vec<ConvexPiece>) {
    let done = |members, solidity, reason, out: &mut Vec<ConvexPiece>| {
        out.push(ConvexPiece {
            members,
            solidity,
            depth,
            reason,
        })
    };
    if members.len() < 4 {
        return done(members, None, StopReason::TooSmall, out);
    }
    let local: Vec<[f64; 2]> = members.iter().map(|&i| points[i]).collect();
    let Some(s) = solidity(&local, params.alpha_factor) else {
        return done(members, None, StopReason::Unsplittable, out);
    };
    if s >= params.solidity_threshold {
        return done(members, Some(s), StopReason::Solid, out);
    }
    if depth >= params.max_depth {
        return done(members, Some(s), StopReason::DepthLimit, out);
    }
    let seed = rng::mix(params.seed, (members[0] as u64) << 8 | depth as u64);
    let Some(side) = spectral::spectral_bisect(&local, params.spectral_k, seed) else {
        return done(members, Some(s), StopReason::Unsplittable, out);
    };
    let (a, b): (Vec<(usize, bool)>, Vec<(usize, bool)>) = members.iter().copied().zip(side).partition(|x| x.1);
    if a.is_empty() || b.is_empty() {
        return done(members, Some(s), StopReason::Unsplittable, out);
    }
    convexify_rec(points, a.into_iter().map(|x| x.0).collect(), depth + 1, params, out);
    convexify_rec(points, b.into_iter().map(|x| x.0).collect(), depth + 1, params, out);
}

/// Everything the superpoint stage computed, for inspection and tests.
#[derive(Debug, Clone)]
pub struct SuperpointResult {
    /// Partition of the full-resolution input cloud.
    pub partition: SuperpointPartition,
    /// Voxel-averaged cloud.
    pub downsampled: PointCloud,
    /// Indices into `downsampled` of the points that were embedded.
    pub embedded: Vec<usize>,
    pub tsne: Option<TsneRun>,
    /// Superpoint id per downsampled point.
    pub downsampled_ids: Vec<usize>,
    pub pieces: Vec<ConvexPiece>,
}

pub fn extract_superpoints(cloud: &PointCloud, config: &SuperpointConfig) -> Result<SuperpointResult> {
    config.validate()?;
    if cloud.is_empty() {
        return Ok(SuperpointResult {
            partition: SuperpointPartition::default(),
            downsampled: PointCloud::default(),
            embedded: Vec::new(),
            tsne: None,
            downsampled_ids: Vec::new(),
            pieces: Vec::new(),
        });
    }
    let (down, _) = voxel_filter(cloud, VoxelGridSpec::new(config.voxel_edge)?)?;
    let embedded: Vec<usize> = if down.len() > config.max_embed_points {
        let mut rng = rng::derived(config.tsne.seed, 0x5ab5);
        let mut idx = sample(&mut rng, down.len(), config.max_embed_points).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..down.len()).collect()
    };
    let embed_points: Vec<[f64; 3]> = embedded.iter().map(|&i| down.positions()[i]).collect();
    let run = tsne_embed(&embed_points, &config.tsne)?;
    let coords = &run.embedding.coords;

    let clusters = euclidean_cluster_2d(&run.embedding, config.cluster_threshold)?;
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    let mut cluster_members = vec![Vec::new(); k];
    for (i, &c) in clusters.iter().enumerate() {
        cluster_members[c].push(i);
    }
    let params = ConvexifyParams::from(config);
    let mut pieces = Vec::new();
    for members in cluster_members {
        let local: Vec<[f64; 2]> = members.iter().map(|&i| coords[i]).collect();
        if members.len() >= 3 && detect_linear(&local, config.linear_threshold) {
            pieces.push(ConvexPiece {
                members,
                solidity: None,
                depth: 0,
                reason: StopReason::Linear,
            });
        } else {
            pieces.extend(convexify(coords, &members, &params));
        }
    }

    let mut embedded_ids = vec![0usize; embedded.len()];
    for (s, piece) in pieces.iter().enumerate() {
        for &i in &piece.members {
            embedded_ids[i] = s;
        }
    }
    let downsampled_ids = if embedded.len() == down.len() {
        embedded_ids.clone()
    } else {
        let near = nearest_indices(&embed_points, down.positions())?;
        near.iter().map(|&j| embedded_ids[j]).collect()
    };
    let near = nearest_indices(down.positions(), cloud.positions())?;
    let full: Vec<usize> = near.iter().map(|&j| downsampled_ids[j]).collect();
    // superpoints that lost all their points in the NN transfer disappear; renumber densely
    let partition = SuperpointPartition::from_labels(&full);

    Ok(SuperpointResult {
        partition,
        downsampled: down,
        embedded,
        tsne: Some(run),
        downsampled_ids,
        pieces,
    })
}
