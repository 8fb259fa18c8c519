//! Per-superpoint classifiers behind one interface, selectable by name, and
//! the plant segmentation built on them.

use nalgebra::{Matrix3, SymmetricEigen};

use super::LscNet;
use crate::cloud::{Label, PointCloud};
use crate::error::{Error, Result};
use crate::superpoint::{extract_superpoints, SuperpointConfig, SuperpointResult};

/// Assigns one class to a whole superpoint.
pub trait SuperpointClassifier {
    fn name(&self) -> &'static str;
    /// `members` index into `cloud`.
    fn classify(&self, cloud: &PointCloud, members: &[usize]) -> Result<Label>;
}

/// The trained network.
pub struct LscNetClassifier {
    pub net: LscNet,
    pub seed: u64,
}

impl SuperpointClassifier for LscNetClassifier {
    fn name(&self) -> &'static str {
        "lscnet"
    }

    fn classify(&self, cloud: &PointCloud, members: &[usize]) -> Result<Label> {
        let pts: Vec<_> = members.iter().map(|&i| cloud.positions()[i]).collect();
        Ok(self.net.classify(&pts, self.seed)?.label())
    }
}

/// Shape baseline: elongated superpoints are stem, everything else leaf.
pub struct GeometricClassifier {
    /// Stem when `λ₁ / (λ₁ + λ₂ + λ₃) ≥ linearity`.
    pub linearity: f64,
}

impl Default for GeometricClassifier {
    fn default() -> Self {
        GeometricClassifier { linearity: 0.8 }
    }
}

impl SuperpointClassifier for GeometricClassifier {
    fn name(&self) -> &'static str {
        "geometric"
    }

    fn classify(&self, cloud: &PointCloud, members: &[usize]) -> Result<Label> {
        let pts: Vec<_> = members.iter().map(|&i| cloud.positions()[i]).collect();
        let Some(c) = crate::cloud::centroid(&pts) else {
            return Err(Error::InvalidInput("empty superpoint".into()));
        };
        let mut cov = Matrix3::zeros();
        for p in &pts {
            let d = nalgebra::Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
            cov += d * d.transpose();
        }
        let ev = SymmetricEigen::new(cov).eigenvalues;
        let total: f64 = ev.iter().sum();
        let top = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // a single point or coincident points are as elongated as it gets
        Ok(if total <= 0.0 || top / total >= self.linearity {
            Label::Stem
        } else {
            Label::Leaf
        })
    }
}

/// Majority of the cloud's own semantic labels (ties to stem). Only
/// meaningful on annotated input; used to isolate oversegmentation error.
pub struct OracleClassifier;

impl SuperpointClassifier for OracleClassifier {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn classify(&self, cloud: &PointCloud, members: &[usize]) -> Result<Label> {
        let labels = cloud.semantic();
        let leaf = members.iter().filter(|&&i| labels[i] == Label::Leaf).count();
        let stem = members.iter().filter(|&&i| labels[i] == Label::Stem).count();
        if leaf + stem == 0 {
            return Err(Error::InvalidInput("oracle classifier needs labeled points".into()));
        }
        Ok(if leaf > stem { Label::Leaf } else { Label::Stem })
    }
}

type Builder = fn(Option<LscNet>, u64) -> Result<Box<dyn SuperpointClassifier>>;

const REGISTRY: &[(&str, Builder)] = &[
    ("lscnet", |net, seed| match net {
        Some(net) => Ok(Box::new(LscNetClassifier { net, seed })),
        None => Err(Error::Config("the lscnet classifier needs a model".into())),
    }),
    ("geometric", |_, _| Ok(Box::new(GeometricClassifier::default()))),
    ("oracle", |_, _| Ok(Box::new(OracleClassifier))),
];

pub fn classifier_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

pub fn classifier_by_name(name: &str, net: Option<LscNet>, seed: u64) -> Result<Box<dyn SuperpointClassifier>> {
    let (_, build) = REGISTRY.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        Error::Config(format!("unknown classifier {name:?}; available: {}", classifier_names().join(", ")))
    })?;
    build(net, seed)
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    /// Input cloud with predicted semantic labels.
    pub cloud: PointCloud,
    pub superpoints: SuperpointResult,
    /// Predicted class per superpoint.
    pub superpoint_labels: Vec<Label>,
}

/// Oversegments the cloud, classifies every superpoint and gives each point
/// its superpoint's class.
pub fn segment_plant(
    cloud: &PointCloud,
    classifier: &dyn SuperpointClassifier,
    config: &SuperpointConfig,
) -> Result<Segmentation> {
    let superpoints = extract_superpoints(cloud, config)?;
    let superpoint_labels = superpoints
        .partition
        .members
        .iter()
        .map(|m| classifier.classify(cloud, m))
        .collect::<Result<Vec<_>>>()?;
    let labels = superpoints.partition.ids.iter().map(|&s| superpoint_labels[s]).collect();
    let mut out = cloud.clone();
    out.set_semantic(labels)?;
    Ok(Segmentation {
        cloud: out,
        superpoints,
        superpoint_labels,
    })
}
