use super::{KdTree, PointCloud};
use crate::error::{Error, Result};

/// Disjoint-set forest with path halving and union by size.
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    /// Dense labels `0..k`, numbered in order of each set's lowest member.
    pub fn labels(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut id_of_root = vec![usize::MAX; n];
        let mut next = 0;
        (0..n)
            .map(|i| {
                let r = self.find(i);
                if id_of_root[r] == usize::MAX {
                    id_of_root[r] = next;
                    next += 1;
                }
                id_of_root[r]
            })
            .collect()
    }
}

/// Single-linkage components: two points share an id iff a chain of points
/// with consecutive gaps `<= link_radius` joins them. Ids are dense and
/// numbered by each component's lowest point index.
pub fn connected_components<const D: usize>(points: &[[f64; D]], link_radius: f64) -> Result<Vec<usize>> {
    if !(link_radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "link radius must be > 0, got {link_radius}"
        )));
    }
    let tree = KdTree::new(points);
    let mut uf = UnionFind::new(points.len());
    for (i, p) in points.iter().enumerate() {
        tree.for_each_within(p, link_radius, |j, _| {
            if j > i {
                uf.union(i, j);
            }
        });
    }
    Ok(uf.labels())
}

/// Index of the nearest source point for every target point (lowest index on ties).
pub fn nearest_indices<const D: usize>(source: &[[f64; D]], target: &[[f64; D]]) -> Result<Vec<usize>> {
    if source.is_empty() {
        return Err(Error::InvalidInput("nearest-neighbour source is empty".into()));
    }
    let tree = KdTree::new(source);
    Ok(target
        .iter()
        .map(|q| tree.nearest(q).expect("non-empty tree").0)
        .collect())
}

/// Copies each target point's semantic and instance label from its nearest source point.
pub fn nn_propagate(source: &PointCloud, target: &PointCloud) -> Result<PointCloud> {
    let nearest = nearest_indices(source.positions(), target.positions())?;
    let semantic = nearest.iter().map(|&i| source.semantic()[i]).collect();
    let instance = match source.instance() {
        Some(inst) => Some(nearest.iter().map(|&i| inst[i]).collect()),
        None => target.instance().map(<[u32]>::to_vec),
    };
    PointCloud::new(
        target.positions().to_vec(),
        target.colors().map(<[_]>::to_vec),
        target.confidence().map(<[_]>::to_vec),
        semantic,
        instance,
    )
}
